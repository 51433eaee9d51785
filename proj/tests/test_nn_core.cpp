#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "tedrec/adam.hpp"
#include "tedrec/gradcheck.hpp"
#include "tedrec/loss.hpp"
#include "tedrec/params.hpp"

using namespace tedrec;

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Matrix<double> items{{1, 2}, {3, 4}, {-1, 0.5}, {0, 0}, {7, 7}};
  std::vector<double> repr{0, 0};
  for (std::size_t target = 1; target <= 5; ++target) {
    const auto r = cross_entropy_loss<double>(repr, items, target, {});
    EXPECT_NEAR(r.loss, std::log(5.0), 1e-12);
  }
}

TEST(CrossEntropy, ThreeItemHandCase) {
  // logits = repr . items = [1, 2, 3]
  Matrix<double> items{{1}, {2}, {3}};
  std::vector<double> repr{1};
  const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const auto r = cross_entropy_loss<double>(repr, items, 3, {});
  EXPECT_NEAR(r.loss, expected, 1e-12);
  EXPECT_NEAR(r.loss, 0.4076, 1e-4);
}

TEST(CrossEntropy, TemperatureDividesLogits) {
  Matrix<double> items{{2}, {4}, {6}};
  std::vector<double> repr{1};
  const auto r = cross_entropy_loss<double>(repr, items, 3, {2.0});
  EXPECT_NEAR(r.loss, std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0, 1e-12);
}

TEST(CrossEntropy, RejectsBadTargetAndTemperature) {
  Matrix<double> items{{1}, {2}};
  std::vector<double> repr{1};
  EXPECT_THROW(cross_entropy_loss<double>(repr, items, 0, {}), InvalidArgument);
  EXPECT_THROW(cross_entropy_loss<double>(repr, items, 3, {}), InvalidArgument);
  EXPECT_THROW(cross_entropy_loss<double>(repr, items, 1, {0.0}), InvalidArgument);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix<double> repr(1, 4), items(6, 4);
  for (auto& v : repr.flat()) v = nd(rng);
  for (auto& v : items.flat()) v = nd(rng);
  const LossConfig cfg{0.7};
  auto forward = [&] {
    Matrix<double> y(1, 1);
    y(0, 0) = cross_entropy_loss<double>(repr.row(0), items, 4, cfg).loss;
    return y;
  };
  auto backward = [&](const Matrix<double>& up) {
    auto r = cross_entropy_loss<double>(repr.row(0), items, 4, cfg);
    Matrix<double> gr(1, 4, r.grad_repr);
    for (auto& v : gr.flat()) v *= up(0, 0);
    for (auto& v : r.grad_items.flat()) v *= up(0, 0);
    return std::vector<Matrix<double>>{gr, r.grad_items};
  };
  const auto rep = gradient_contract({{"repr", &repr}, {"items", &items}}, forward, backward);
  EXPECT_LT(rep.max_relative_error, 1e-6);
}

TEST(ScoreItems, ZeroReprIsUniformAndHandCaseMatches) {
  Matrix<double> items{{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  std::vector<double> zero{0, 0};
  for (double p : score_items<double>(zero, items)) EXPECT_NEAR(p, 0.25, 1e-15);

  std::vector<double> repr{0.5, -2};
  const auto p = score_items<double>(repr, items);
  const double z = std::exp(0.5) + std::exp(-2.0) + std::exp(-0.5) + std::exp(2.0);
  EXPECT_NEAR(p[0], std::exp(0.5) / z, 1e-12);
  EXPECT_NEAR(p[1], std::exp(-2.0) / z, 1e-12);
  EXPECT_NEAR(p[2], std::exp(-0.5) / z, 1e-12);
  EXPECT_NEAR(p[3], std::exp(2.0) / z, 1e-12);

  std::vector<double> big{0, 50};
  const auto q = score_items<double>(big, items);
  EXPECT_EQ(std::max_element(q.begin(), q.end()) - q.begin(), 1);
}

TEST(ScoreItems, PositiveScalingKeepsArgmax) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  Matrix<double> items(10, 3);
  for (auto& v : items.flat()) v = nd(rng);
  std::vector<double> repr{nd(rng), nd(rng), nd(rng)};
  const auto a = item_logits<double>(repr, items);
  for (auto& v : items.flat()) v *= 3.5;
  const auto b = item_logits<double>(repr, items);
  EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(b.begin(), b.end()) - b.begin());
}

namespace {

ParamStore<double> scalar_store(double init) {
  ParamStore<double> p;
  p.add("w", {1, 1}, InitSpec::constant(init));
  std::mt19937_64 rng(0);
  p.initialize(rng);
  return p;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = scalar_store(1.5);
  AdamState<double> st(p, {});
  GradStore<double> g(p);
  adam_step(p, g, st);
  EXPECT_EQ(p["w"](0, 0), 1.5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> p;
  p.add("w", {1, 3}, InitSpec::zeros());
  std::mt19937_64 rng(0);
  p.initialize(rng);
  AdamState<double> st(p, {0.01, 0.9, 0.999, 1e-8});
  GradStore<double> g(p);
  g[0](0, 0) = 3.0;
  g[0](0, 1) = -1e-3;
  adam_step(p, g, st);
  EXPECT_NEAR(p["w"](0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p["w"](0, 1), 0.01, 1e-7);
  EXPECT_EQ(p["w"](0, 2), 0.0);
}

TEST(Adam, TwoStepsMatchHandRecurrences) {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto p = scalar_store(1.0);
  AdamState<double> st(p, {lr, b1, b2, eps});
  GradStore<double> g(p);
  g[0](0, 0) = 1.0;

  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    adam_step(p, g, st);
    EXPECT_NEAR(p["w"](0, 0), w, 1e-6);
  }
  EXPECT_NEAR(p["w"](0, 0), 0.8, 1e-6);
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  auto p = scalar_store(2.0);
  AdamState<double> st(p, {0.0, 0.9, 0.999, 1e-8});
  GradStore<double> g(p);
  g[0](0, 0) = 5.0;
  for (int i = 0; i < 5; ++i) adam_step(p, g, st);
  EXPECT_EQ(p["w"](0, 0), 2.0);
}

TEST(Adam, NonFiniteGradientThrowsWithoutUpdating) {
  auto p = scalar_store(2.0);
  AdamState<double> st(p, {});
  GradStore<double> g(p);
  g[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step(p, g, st), NumericError);
  EXPECT_EQ(p["w"](0, 0), 2.0);
  EXPECT_EQ(st.step, 0u);
}

namespace {

void fill_store(ParamStore<double>& p) {
  p.add("a", {2, 3}, InitSpec::normal(1.0));
  p.add("b.bias", {4}, InitSpec::normal(1.0));
  p.add("c", {2, 2, 2}, InitSpec::normal(1.0));
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  ParamStore<double> a, b;
  fill_store(a);
  fill_store(b);
  std::mt19937_64 rng(5);
  a.initialize(rng);
  const auto path = (std::filesystem::temp_directory_path() / "tedrec_ckpt_roundtrip.ckpt").string();
  save_checkpoint(a, path);
  load_checkpoint(path, b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.entry(i).value, b.entry(i).value);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  std::filesystem::remove(path);
}

TEST(Checkpoint, MismatchesAreRejectedWithoutPartialWrites) {
  ParamStore<double> a;
  fill_store(a);
  std::mt19937_64 rng(6);
  a.initialize(rng);
  const auto bytes = encode_checkpoint(a);

  ParamStore<double> renamed;
  renamed.add("a", {2, 3}, InitSpec::zeros());
  renamed.add("b.weight", {4}, InitSpec::zeros());
  renamed.add("c", {2, 2, 2}, InitSpec::zeros());
  EXPECT_THROW(decode_checkpoint(bytes, renamed), DataError);
  for (double v : renamed["a"].flat()) EXPECT_EQ(v, 0.0);

  ParamStore<double> reshaped;
  reshaped.add("a", {3, 2}, InitSpec::zeros());
  reshaped.add("b.bias", {4}, InitSpec::zeros());
  reshaped.add("c", {2, 2, 2}, InitSpec::zeros());
  try {
    decode_checkpoint(bytes, reshaped);
    FAIL() << "shape mismatch accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
  }

  ParamStore<double> fewer;
  fewer.add("a", {2, 3}, InitSpec::zeros());
  EXPECT_THROW(decode_checkpoint(bytes, fewer), DataError);

  ParamStore<double> same;
  fill_store(same);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8), same), IoError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3), same), IoError);
  EXPECT_THROW(decode_checkpoint(bytes + "x", same), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt", same), IoError);
}

TEST(ParamStore, RejectsDuplicatesAndUnknownNames) {
  ParamStore<double> p;
  p.add("x", {2}, InitSpec::zeros());
  EXPECT_THROW(p.add("x", {3}, InitSpec::zeros()), InvalidArgument);
  EXPECT_THROW(p["y"], InvalidArgument);
}

TEST(GradientContract, AffineMapIsExact) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  Matrix<double> a(3, 4), x(4, 2), b(3, 1);
  for (auto* m : {&a, &x, &b}) {
    for (auto& v : m->flat()) v = nd(rng);
  }
  auto forward = [&] {
    Matrix<double> y(3, 2);
    gemm_acc<double>(a, x, y.view());
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) y(i, j) += b(i, 0);
    }
    return y;
  };
  auto backward = [&](const Matrix<double>& up) {
    Matrix<double> ga(3, 4), gx(4, 2), gb(3, 1);
    gemm_nt_acc<double>(up, x, ga.view());
    gemm_tn_acc<double>(a, up, gx.view());
    for (std::size_t i = 0; i < 3; ++i) gb(i, 0) = up(i, 0) + up(i, 1);
    return std::vector<Matrix<double>>{ga, gx, gb};
  };
  const auto rep = gradient_contract({{"A", &a}, {"x", &x}, {"b", &b}}, forward, backward);
  EXPECT_LT(rep.max_relative_error, 1e-10);
  EXPECT_EQ(rep.coordinates, 12u + 8u + 3u);
}

TEST(GradientContract, DetectsAWrongGradient) {
  Matrix<double> x{{1.0, 2.0}};
  auto forward = [&] {
    Matrix<double> y(1, 2);
    y(0, 0) = x(0, 0) * x(0, 0);
    y(0, 1) = x(0, 1);
    return y;
  };
  auto backward = [&](const Matrix<double>& up) {
    Matrix<double> g(1, 2);
    g(0, 0) = up(0, 0) * x(0, 0);  // missing factor 2
    g(0, 1) = up(0, 1);
    return std::vector<Matrix<double>>{g};
  };
  const auto rep = gradient_contract({{"x", &x}}, forward, backward);
  EXPECT_GT(rep.max_relative_error, 1e-3);
  EXPECT_EQ(rep.worst_index, 0u);
}
