#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tedrec/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr together.
Run run(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return {-1, ""};
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

const std::string kCli = TEDREC_CLI_PATH;
const std::string kSynth = TEDREC_SYNTH_PATH;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tedrec_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string data_flags(const fs::path& d) {
  return " --set data.interactions=" + (d / "interactions.tsv").string() +
         " --set data.embeddings=" + (d / "embeddings.bin").string() +
         " --set data.embedding_map=" + (d / "embeddings.items.tsv").string();
}

std::string tiny_model() {
  return " --set model.d=8 --set model.d_ff=16 --set model.max_len=8 --set model.experts=2"
         " --set optim.batch_size=64 --set optim.max_epochs=2 --set optim.lr=0.01";
}

}  // namespace

TEST(Verify, SmallRunPassesAndFaultIsCaught) {
  const auto ok = tedrec::run_verification({.seed = 3, .trials = 2});
  EXPECT_TRUE(ok.passed);
  EXPECT_FALSE(ok.vacuous);
  for (const auto& s : ok.suites) EXPECT_TRUE(s.passed) << s.name << " " << s.worst_error;
  const auto bad = tedrec::run_verification({.seed = 3, .trials = 2, .inject_fault = true});
  EXPECT_FALSE(bad.passed);
  const auto none = tedrec::run_verification({.seed = 3, .trials = 0});
  EXPECT_TRUE(none.vacuous);
}

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run(kCli + " frobnicate").code, 1);
  EXPECT_EQ(run(kCli + " verify --set model.d").code, 1);
  EXPECT_EQ(run(kCli + " verify --set no.such.key=3").code, 1);
  EXPECT_EQ(run(kCli + " evaluate").code, 1);
}

TEST(Cli, VerifyExitCodes) {
  const auto dir = scratch("verify");
  const auto ok = run(kCli + " verify --trials 1 --out " + dir.string());
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_TRUE(fs::exists(dir / "manifest_verify.json"));
  EXPECT_EQ(run(kCli + " verify --trials 1 --inject-fault --out " + dir.string()).code, 3);
  const auto zero = run(kCli + " verify --trials 0 --out " + dir.string());
  EXPECT_EQ(zero.code, 0);
  EXPECT_NE(zero.output.find("0 trials requested"), std::string::npos) << zero.output;
}

TEST(Cli, MissingInputsAreDataErrors) {
  const auto dir = scratch("missing");
  EXPECT_EQ(run(kCli + " -q train --out " + dir.string() + data_flags(dir / "nowhere")).code, 2);
  const auto data = scratch("missing_data");
  ASSERT_EQ(run(kSynth + " --users 30 --items 12 --min-length 6 --max-length 10 --text-dim 6 --out " + data.string()).code, 0);
  EXPECT_EQ(run(kCli + " evaluate --checkpoint " + (dir / "none.ckpt").string() + " --out " + dir.string() +
                data_flags(data) + tiny_model())
                .code,
            2);
}

TEST(Cli, TrainThenEvaluateRoundTrip) {
  const auto data = scratch("rt_data");
  ASSERT_EQ(run(kSynth + " --users 30 --items 12 --min-length 6 --max-length 10 --text-dim 6 --out " + data.string()).code, 0);
  const auto out = scratch("rt_out");
  const auto tr = run(kCli + " -q train --seed 5 --out " + out.string() + data_flags(data) + tiny_model());
  ASSERT_EQ(tr.code, 0) << tr.output;
  for (const char* f : {"model.ckpt", "train_log.json", "metrics_valid.json", "manifest_train.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream a(out / "metrics_valid.json");
  const auto saved = nlohmann::json::parse(a);
  a.close();
  const auto ev = run(kCli + " evaluate --phase valid --checkpoint " + (out / "model.ckpt").string() + " --out " +
                      out.string() + data_flags(data) + tiny_model());
  ASSERT_EQ(ev.code, 0) << ev.output;
  // evaluate rewrote metrics_valid.json from the reloaded checkpoint
  std::ifstream b(out / "metrics_valid.json");
  const auto again = nlohmann::json::parse(b);
  EXPECT_EQ(saved["10"], again["10"]);
  EXPECT_EQ(saved["20"], again["20"]);
  // a checkpoint from a different architecture is rejected
  EXPECT_EQ(run(kCli + " evaluate --checkpoint " + (out / "model.ckpt").string() + " --out " + out.string() +
                data_flags(data) + tiny_model() + " --set model.d=12")
                .code,
            2);
}

TEST(Synth, RejectsBadArguments) {
  EXPECT_NE(run(kSynth + " --kind spiral").code, 0);
  EXPECT_EQ(run(kSynth + " --help").code, 0);
}
