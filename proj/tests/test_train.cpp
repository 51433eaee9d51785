#include <gtest/gtest.h>

#include <memory>

#include "tedrec/params.hpp"
#include "tedrec/synthetic.hpp"
#include "tedrec/train.hpp"

using namespace tedrec;

namespace {

struct Fixture {
  DatasetSplit split;
  std::shared_ptr<const TextEmbeddingStore> text;
};

Fixture rotation(std::size_t users, std::size_t items) {
  RotationSpec spec;
  spec.users = users;
  spec.items = items;
  spec.min_length = 6;
  spec.max_length = 10;
  spec.text_dim = 6;
  const auto ds = make_rotation_dataset(spec);
  Fixture f;
  f.split = split_leave_one_out(ds.log());
  f.text = std::make_shared<const TextEmbeddingStore>(align_text_embeddings(f.split, ds.text, ds.token_rows()));
  return f;
}

ModelConfig tiny(const Fixture& f) {
  ModelConfig m;
  m.num_items = f.split.num_items();
  m.text_dim = f.text->dim();
  m.max_len = 8;
  m.d = 8;
  m.layers = 1;
  m.heads = 2;
  m.d_ff = 16;
  m.experts = 2;
  return m;
}

TrainConfig quick(std::size_t epochs, double lr) {
  TrainConfig t;
  t.batch_size = 32;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.adam.lr = lr;
  t.seed = 9;
  return t;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersAndLossFixed) {
  const auto f = rotation(30, 12);
  auto cfg = tiny(f);
  cfg.dropout = 0.0;
  cfg.noise_std = 0.0;
  TedRecModel<double> model(cfg, f.text);
  model.initialize(1);
  const auto before = encode_checkpoint(model.params());
  const auto r = train_model(model, f.split, quick(3, 0.0));
  EXPECT_EQ(encode_checkpoint(model.params()), before);
  ASSERT_EQ(r.epochs.size(), 3u);
  for (const auto& e : r.epochs) EXPECT_NEAR(e.loss, r.epochs[0].loss, 1e-6);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  const auto f = rotation(30, 12);
  std::string bytes[2];
  double ndcg[2];
  for (int run = 0; run < 2; ++run) {
    TedRecModel<float> model(tiny(f), f.text);
    model.initialize(3);
    const auto r = train_model(model, f.split, quick(2, 1e-2));
    bytes[run] = encode_checkpoint(model.params());
    ndcg[run] = r.best_valid_ndcg;
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  EXPECT_EQ(ndcg[0], ndcg[1]);
}

TEST(Train, LossDecreasesOnRotation) {
  const auto f = rotation(40, 10);
  TedRecModel<float> model(tiny(f), f.text);
  model.initialize(4);
  const auto r = train_model(model, f.split, quick(6, 1e-2));
  EXPECT_LT(r.epochs.back().loss, r.epochs.front().loss);
  EXPECT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.best_valid_ndcg, [&] {
    double best = -1;
    for (const auto& e : r.epochs) best = std::max(best, e.valid_ndcg);
    return best;
  }());
}

TEST(Train, RestoredModelReproducesBestValidation) {
  const auto f = rotation(30, 12);
  TedRecModel<float> model(tiny(f), f.text);
  model.initialize(5);
  auto tc = quick(4, 1e-2);
  const auto r = train_model(model, f.split, tc);
  const auto ev = evaluate_model(model, f.split, Phase::Valid, tc.eval);
  EXPECT_EQ(ev.at(10).ndcg, r.best_valid_ndcg);
}

TEST(Train, BatchGradientsIndependentOfWorkerCount) {
  const auto f = rotation(20, 12);
  TedRecModel<double> model(tiny(f), f.text);
  model.initialize(6);
  const auto batches = make_training_batches(f.split, 8, 16, 1);
  auto g1 = model.make_grads(), g3 = model.make_grads();
  const double l1 = batch_gradients(model, batches[0], g1, 77, 1);
  const double l3 = batch_gradients(model, batches[0], g3, 77, 3);
  EXPECT_NEAR(l1, l3, 1e-12);
  for (std::size_t i = 0; i < g1.size(); ++i) {
    for (std::size_t j = 0; j < g1[i].size(); ++j) EXPECT_NEAR(g1[i].data()[j], g3[i].data()[j], 1e-12);
  }
}

TEST(Train, EarlyStoppingHonoursPatience) {
  const auto f = rotation(30, 12);
  TedRecModel<float> model(tiny(f), f.text);
  model.initialize(7);
  auto tc = quick(50, 0.0);
  tc.patience = 2;
  const auto r = train_model(model, f.split, tc);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Model, RejectsUnknownItemsAndMismatchedText) {
  const auto f = rotation(20, 12);
  TedRecModel<float> model(tiny(f), f.text);
  const std::vector<std::size_t> bad{1, 99};
  EXPECT_THROW(model.logits(bad), InvalidArgument);
  EXPECT_THROW(model.logits(std::vector<std::size_t>{}), InvalidArgument);
  auto cfg = tiny(f);
  cfg.text_dim = 7;
  EXPECT_THROW((TedRecModel<float>(cfg, f.text)), DataError);
  cfg = tiny(f);
  cfg.num_items = 500;
  EXPECT_THROW((TedRecModel<float>(cfg, f.text)), DataError);
}

TEST(Model, RightAlignmentKeepsMostRecentItems) {
  const auto f = rotation(20, 12);
  TedRecModel<float> model(tiny(f), f.text);
  const std::vector<std::size_t> ctx{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto ids = model.right_align(ctx);
  ASSERT_EQ(ids.size(), 8u);
  EXPECT_EQ(ids.front(), 3u);
  EXPECT_EQ(ids.back(), 10u);
  const std::vector<std::size_t> short_ctx{4, 5};
  const auto s = model.right_align(short_ctx);
  EXPECT_EQ(s, (std::vector<std::size_t>{0, 0, 0, 0, 0, 0, 4, 5}));
}

TEST(Model, ProbabilitiesSumToOneAndFollowLogits) {
  const auto f = rotation(20, 12);
  TedRecModel<double> model(tiny(f), f.text);
  model.initialize(8);
  const std::vector<std::size_t> ctx{2, 3, 4};
  const auto p = model.probabilities(ctx);
  const auto l = model.logits(ctx);
  double s = 0;
  for (double v : p) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), std::max_element(l.begin(), l.end()) - l.begin());
}
