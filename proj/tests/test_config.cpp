#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include "tedrec/config.hpp"

using namespace tedrec;

TEST(RunConfig, DefaultsAreTyped) {
  RunConfig c;
  EXPECT_EQ(c.get<std::size_t>("model.d"), 64u);
  EXPECT_EQ(c.get<std::size_t>("optim.batch_size"), 2048u);
  EXPECT_DOUBLE_EQ(c.get<double>("optim.lr"), 1e-3);
  EXPECT_EQ(c.get<std::string>("model.norm"), "post");
  EXPECT_THROW(c.get<int>("model.nope"), UsageError);
}

TEST(RunConfig, PrecedenceFileThenEnvThenSet) {
  const auto path = (std::filesystem::temp_directory_path() / "tedrec_cfg.json").string();
  std::ofstream(path) << R"({"model.d": 32, "optim.lr": 0.01, "model.layers": 3})";
  RunConfig c;
  c.merge_file(path);
  EXPECT_EQ(c.get<std::size_t>("model.d"), 32u);
  std::map<std::string, std::string> env{{"TEDREC_MODEL_D", "48"}, {"TEDREC_OPTIM_LR", "0.5"}};
  c.apply_env([&](const char* n) -> const char* {
    auto it = env.find(n);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.get<std::size_t>("model.d"), 48u);
  EXPECT_DOUBLE_EQ(c.get<double>("optim.lr"), 0.5);
  c.apply_assignment("model.d=16");
  EXPECT_EQ(c.get<std::size_t>("model.d"), 16u);
  EXPECT_EQ(c.get<std::size_t>("model.layers"), 3u);
  std::filesystem::remove(path);
}

TEST(RunConfig, EnvNames) {
  EXPECT_EQ(RunConfig::env_name("optim.batch_size"), "TEDREC_OPTIM_BATCH_SIZE");
  EXPECT_EQ(RunConfig::env_name("ablation.text_fusion"), "TEDREC_ABLATION_TEXT_FUSION");
}

TEST(RunConfig, StringParsingByDefaultType) {
  RunConfig c;
  c.set_string("ablation.text_fusion", "false");
  EXPECT_FALSE(c.get<bool>("ablation.text_fusion"));
  c.set_string("eval.ks", "[5,10,50]");
  EXPECT_EQ(c.get<std::vector<std::size_t>>("eval.ks"), (std::vector<std::size_t>{5, 10, 50}));
  c.set_string("model.temperature", "2");
  EXPECT_DOUBLE_EQ(c.get<double>("model.temperature"), 2.0);
  EXPECT_THROW(c.set_string("model.d", "abc"), UsageError);
  EXPECT_THROW(c.set_string("model.d", "-4"), UsageError);
  EXPECT_THROW(c.set_string("ablation.id_filter", "maybe"), UsageError);
  EXPECT_THROW(c.apply_assignment("model.d"), UsageError);
  EXPECT_THROW(c.apply_assignment("unknown.key=1"), UsageError);
}

TEST(RunConfig, FileErrors) {
  RunConfig c;
  EXPECT_THROW(c.merge_file("/nonexistent/cfg.json"), IoError);
  const auto path = (std::filesystem::temp_directory_path() / "tedrec_cfg_bad.json").string();
  std::ofstream(path) << "{not json";
  EXPECT_THROW(c.merge_file(path), UsageError);
  std::ofstream(path) << R"({"model.d": "wide"})";
  EXPECT_THROW(c.merge_file(path), UsageError);
  std::ofstream(path) << "[1, 2]";
  EXPECT_THROW(c.merge_file(path), UsageError);
  std::filesystem::remove(path);
}

TEST(RunConfig, DerivedConfigsAndValidation) {
  RunConfig c;
  c.apply_assignment("model.norm=pre");
  c.apply_assignment("ablation.moe_modulation=false");
  const auto m = c.model_config(100, 32);
  EXPECT_EQ(m.num_items, 100u);
  EXPECT_EQ(m.text_dim, 32u);
  EXPECT_TRUE(m.pre_norm);
  EXPECT_FALSE(m.switches.use_moe_modulation);
  EXPECT_TRUE(m.switches.use_text_fusion);
  c.apply_assignment("model.norm=sideways");
  EXPECT_THROW(c.model_config(100, 32), UsageError);

  RunConfig t;
  t.apply_assignment("optim.batch_size=0");
  EXPECT_THROW(t.train_config(), UsageError);
  RunConfig e;
  e.apply_assignment("eval.ks=0,10");
  EXPECT_THROW(e.eval_config(), UsageError);
  e.apply_assignment("eval.ks=10");
  e.apply_assignment("eval.group_edges=20,5");
  EXPECT_THROW(e.eval_config(), UsageError);
}
