#include <gtest/gtest.h>

#include <random>

#include "tedrec/gradcheck.hpp"
#include "tedrec/model.hpp"

using namespace tedrec;

namespace {

std::shared_ptr<const TextEmbeddingStore> random_text(std::size_t items, std::size_t dim, std::uint64_t seed) {
  Matrix<float> table(items + 1, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd;
  for (std::size_t r = 1; r <= items; ++r) {
    for (auto& v : table.row(r)) v = nd(rng);
  }
  return std::make_shared<const TextEmbeddingStore>(std::move(table));
}

ModelConfig small_config(const AblationSwitches& sw) {
  ModelConfig cfg;
  cfg.num_items = 7;
  cfg.text_dim = 5;
  cfg.max_len = 6;
  cfg.d = 4;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_ff = 6;
  cfg.experts = 2;
  cfg.dropout = 0.0;
  cfg.noise_std = 0.0;
  cfg.init_std = 0.3;
  cfg.modulation_std = 0.3;
  cfg.filter_init = "random";
  cfg.ln_eps = 1e-5;
  cfg.switches = sw;
  return cfg;
}

// Gate parameters start at zero; move them off the symmetric point so the
// check exercises every branch.
void randomize_all(TedRecModel<double>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto& e : m.params()) {
    if (e.name.find("gate") != std::string::npos) {
      for (auto& v : e.value.flat()) v = nd(rng);
    }
  }
}

}  // namespace

class ModelGradient : public ::testing::TestWithParam<int> {};

TEST_P(ModelGradient, EndToEndLossMatchesFiniteDifferences) {
  const int mask = GetParam();
  AblationSwitches sw{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0};
  TedRecModel<double> model(small_config(sw), random_text(7, 5, 3));
  model.initialize(11);
  randomize_all(model, 5);
  const std::vector<std::size_t> context{3, 1, 7, 2};
  const std::size_t target = 5;

  std::vector<GradVariable> vars;
  for (auto& e : model.params()) vars.push_back({e.name, &e.value});
  auto forward = [&] {
    Matrix<double> y(1, 1);
    y(0, 0) = model.loss(context, target);
    return y;
  };
  auto backward = [&](const Matrix<double>& up) {
    auto g = model.make_grads();
    model.accumulate_gradients(context, target, g, up(0, 0), false, nullptr);
    std::vector<Matrix<double>> out;
    for (std::size_t i = 0; i < g.size(); ++i) out.push_back(g[i]);
    return out;
  };
  const auto report = gradient_contract(vars, forward, backward);
  auto g = model.make_grads();
  model.accumulate_gradients(context, target, g, 1.0, false, nullptr);
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (double v : g[i].flat()) total += std::abs(v);
  }
  EXPECT_GT(total, 1e-2);
  EXPECT_LT(report.max_relative_error, 1e-6) << report.worst_variable << "[" << report.worst_index << "]";
}

INSTANTIATE_TEST_SUITE_P(AllSwitchCombinations, ModelGradient, ::testing::Range(0, 16));
