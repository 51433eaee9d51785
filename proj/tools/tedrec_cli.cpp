// tedrec: train / evaluate / verify / ablate / bench / stats.
//
// Exit codes: 0 ok, 1 usage, 2 data or I/O, 3 numeric failure (including a
// failed verification).

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tedrec/bench.hpp"
#include "tedrec/config.hpp"
#include "tedrec/pipeline.hpp"
#include "tedrec/train.hpp"
#include "tedrec/verify.hpp"

#ifndef TEDREC_BUILD_ID
#define TEDREC_BUILD_ID "unknown"
#endif

namespace {

using namespace tedrec;
using Json = nlohmann::ordered_json;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> assignments;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config of dotted keys");
  cmd->add_option("--set", o.assignments, "Override one key: key=value (repeatable)")->take_all();
  cmd->add_option("--seed", o.seed, "Random seed (run.seed)");
  cmd->add_option("--workers", o.workers, "Worker threads (run.workers)");
  cmd->add_option("--out", o.out, "Output directory (run.out)");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg.merge_file(o.config_path);
  cfg.apply_env();
  for (const auto& a : o.assignments) cfg.apply_assignment(a);
  if (o.seed) cfg.set_json("run.seed", *o.seed);
  if (o.workers) cfg.set_json("run.workers", *o.workers);
  if (o.out) cfg.set_json("run.out", *o.out);
  return cfg;
}

std::string out_dir(const RunConfig& cfg) {
  const auto dir = cfg.get<std::string>("run.out");
  std::filesystem::create_directories(dir);
  return dir;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg, const Json& extra = {}) {
  Json j;
  j["command"] = command;
  j["build"] = TEDREC_BUILD_ID;
  j["seed"] = cfg.get<std::uint64_t>("run.seed");
  j["workers"] = cfg.get<std::size_t>("run.workers");
  j["started_at"] = utc_now();
  j["config"] = cfg.values();
  if (!extra.is_null()) j["details"] = extra;
  write_json_file(dir + "/manifest_" + command + ".json", j);
}

// ---------------------------------------------------------------------------

template <class T>
TrainResult train_and_save(const RunConfig& cfg, const PreparedData& data, const std::string& dir, bool quiet) {
  TedRecModel<T> model(cfg.model_config(data.split.num_items(), data.text->dim()), data.text);
  model.initialize(cfg.get<std::uint64_t>("run.seed"));
  const auto tc = cfg.train_config();
  const auto result = train_model(model, data.split, tc, [&](const EpochLog& e) {
    if (!quiet) {
      std::cerr << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(6) << e.loss << "  valid ndcg@"
                << tc.select_k << " " << e.valid_ndcg << "  (" << std::setprecision(2) << e.seconds << " s)\n";
      std::cerr.unsetf(std::ios::floatfield);
    }
  });
  save_checkpoint(model.params(), dir + "/model.ckpt");
  write_json_file(dir + "/train_log.json", to_json(result, tc.select_k));
  auto best = evaluate_model(model, data.split, Phase::Valid, tc.eval);
  write_json_file(dir + "/metrics_valid.json", to_json(best));
  return result;
}

template <class T>
EvalResult load_and_evaluate(const RunConfig& cfg, const PreparedData& data, const std::string& checkpoint, Phase phase) {
  TedRecModel<T> model(cfg.model_config(data.split.num_items(), data.text->dim()), data.text);
  load_checkpoint(checkpoint, model.params());
  return evaluate_model(model, data.split, phase, cfg.eval_config());
}

bool use_double(const RunConfig& cfg) {
  const auto p = cfg.get<std::string>("model.precision");
  if (p != "float32" && p != "float64") throw UsageError("model.precision must be float32 or float64");
  return p == "float64";
}

int cmd_train(const CommonOptions& o, bool quiet) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(cfg);
  write_manifest(dir, "train", cfg);
  const auto data = prepare_data(cfg);
  write_split_manifest(dir, data);
  const auto r = use_double(cfg) ? train_and_save<double>(cfg, data, dir, quiet) : train_and_save<float>(cfg, data, dir, quiet);
  std::cout << Json{{"best_epoch", r.best_epoch},
                    {"best_valid_ndcg@" + std::to_string(cfg.get<std::size_t>("eval.select_k")), r.best_valid_ndcg},
                    {"epochs", r.epochs.size()},
                    {"checkpoint", dir + "/model.ckpt"}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::string& phase_text) {
  const auto cfg = resolve_config(o);
  const auto phase = parse_phase(phase_text);
  if (!std::filesystem::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);
  const auto dir = out_dir(cfg);
  write_manifest(dir, "evaluate", cfg, Json{{"checkpoint", checkpoint}, {"phase", phase_text}});
  const auto data = prepare_data(cfg);
  const auto r = use_double(cfg) ? load_and_evaluate<double>(cfg, data, checkpoint, phase)
                                 : load_and_evaluate<float>(cfg, data, checkpoint, phase);
  const auto j = to_json(r);
  write_json_file(dir + "/metrics_" + phase_text + ".json", j);
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_verify(const CommonOptions& o, std::optional<std::size_t> trials, bool inject_fault) {
  const auto cfg = resolve_config(o);
  VerifyOptions opt;
  opt.seed = cfg.get<std::uint64_t>("run.seed");
  opt.trials = trials ? *trials : cfg.get<std::size_t>("verify.trials");
  opt.inject_fault = inject_fault;
  const auto dir = out_dir(cfg);
  write_manifest(dir, "verify", cfg, Json{{"trials", opt.trials}, {"inject_fault", inject_fault}});
  if (opt.trials == 0) std::cerr << "warning: 0 trials requested; every suite passes vacuously\n";
  const auto report = run_verification(opt);
  Json j;
  j["trials"] = opt.trials;
  j["inject_fault"] = inject_fault;
  j["passed"] = report.passed;
  auto suites = Json::array();
  for (const auto& s : report.suites) {
    suites.push_back({{"suite", s.name},
                      {"trials", s.trials},
                      {"worst_error", s.worst_error},
                      {"tolerance", s.tolerance},
                      {"passed", s.passed},
                      {"worst_case", s.worst_case}});
    std::cout << std::left << std::setw(28) << s.name << (s.passed ? "pass" : "FAIL") << "  worst " << std::scientific
              << std::setprecision(3) << s.worst_error << "  tol " << s.tolerance << '\n';
    std::cout.unsetf(std::ios::floatfield);
  }
  j["suites"] = std::move(suites);
  write_json_file(dir + "/verify.json", j);
  std::cout << (report.passed ? "all suites passed" : "verification FAILED") << " (" << opt.trials << " trials)\n";
  return report.passed ? 0 : kExitNumeric;
}

int cmd_ablate(const CommonOptions& o, bool quiet) {
  const auto base = resolve_config(o);
  const auto dir = out_dir(base);
  write_manifest(dir, "ablate", base);
  const auto data = prepare_data(base);
  write_split_manifest(dir, data);
  struct Variant {
    const char* name;
    const char* key;
  };
  const Variant variants[] = {{"full", nullptr},
                              {"w/o MM", "ablation.moe_modulation"},
                              {"w/o AG", "ablation.adaptive_gate"},
                              {"w/o IF", "ablation.id_filter"},
                              {"w/o TF", "ablation.text_fusion"}};
  Json rows = Json::array();
  std::ostringstream csv;
  csv << "variant,recall@10,ndcg@10,best_epoch\n";
  for (const auto& v : variants) {
    RunConfig cfg = base;
    if (v.key) cfg.set_json(v.key, false);
    std::string slug = v.name;
    std::replace(slug.begin(), slug.end(), '/', '_');
    std::replace(slug.begin(), slug.end(), ' ', '_');
    const auto vdir = dir + "/" + slug;
    std::filesystem::create_directories(vdir);
    if (!quiet) std::cerr << "== " << v.name << '\n';
    const auto r = use_double(cfg) ? train_and_save<double>(cfg, data, vdir, quiet) : train_and_save<float>(cfg, data, vdir, quiet);
    const auto test = use_double(cfg) ? load_and_evaluate<double>(cfg, data, vdir + "/model.ckpt", Phase::Test)
                                      : load_and_evaluate<float>(cfg, data, vdir + "/model.ckpt", Phase::Test);
    write_json_file(vdir + "/metrics_test.json", to_json(test));
    const auto& m = test.at(10);
    rows.push_back({{"variant", v.name}, {"recall@10", m.recall}, {"ndcg@10", m.ndcg}, {"best_epoch", r.best_epoch}});
    csv << v.name << ',' << std::setprecision(17) << m.recall << ',' << m.ndcg << ',' << r.best_epoch << '\n';
  }
  Json table{{"seed", base.get<std::uint64_t>("run.seed")}, {"phase", "test"}, {"rows", rows}};
  write_json_file(dir + "/ablation.json", table);
  std::ofstream(dir + "/ablation.csv") << csv.str();
  std::cout << table.dump(2) << '\n';
  return 0;
}

int cmd_bench(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto ns = cfg.get<std::vector<std::size_t>>("bench.n_list");
  const auto d = cfg.get<std::size_t>("bench.d");
  const auto reps = cfg.get<std::size_t>("bench.reps");
  if (ns.empty()) throw UsageError("bench.n_list must not be empty");
  if (reps < 20) throw UsageError("bench.reps must be at least 20");
  const auto dir = out_dir(cfg);
  write_manifest(dir, "bench", cfg);
  const auto rows = bench_spectral(ns, d, reps, cfg.get<std::uint64_t>("run.seed"));
  Json out = Json::array();
  std::ostringstream csv;
  csv << "n,d,reps,rfft_mean_s,rfft_std_s,mutual_filter_mean_s,mutual_filter_std_s\n";
  std::cout << std::left << std::setw(8) << "n" << std::setw(6) << "d" << std::setw(26) << "rfft mean +- sd (ms)"
            << "mutual_filter mean +- sd (ms)\n";
  for (const auto& r : rows) {
    out.push_back({{"n", r.n},
                   {"d", r.d},
                   {"reps", r.reps},
                   {"rfft", {{"mean_seconds", r.rfft.mean_seconds}, {"stddev_seconds", r.rfft.stddev_seconds}}},
                   {"mutual_filter",
                    {{"mean_seconds", r.mutual_filter.mean_seconds}, {"stddev_seconds", r.mutual_filter.stddev_seconds}}}});
    csv << r.n << ',' << r.d << ',' << r.reps << ',' << r.rfft.mean_seconds << ',' << r.rfft.stddev_seconds << ','
        << r.mutual_filter.mean_seconds << ',' << r.mutual_filter.stddev_seconds << '\n';
    std::ostringstream a, b;
    a << std::fixed << std::setprecision(3) << r.rfft.mean_seconds * 1e3 << " +- " << r.rfft.stddev_seconds * 1e3;
    b << std::fixed << std::setprecision(3) << r.mutual_filter.mean_seconds * 1e3 << " +- "
      << r.mutual_filter.stddev_seconds * 1e3;
    std::cout << std::left << std::setw(8) << r.n << std::setw(6) << r.d << std::setw(26) << a.str() << b.str() << '\n';
  }
  write_json_file(dir + "/bench.json", Json{{"rows", out}});
  std::ofstream(dir + "/bench.csv") << csv.str();
  return 0;
}

int cmd_stats(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(cfg);
  write_manifest(dir, "stats", cfg);
  const auto data = prepare_split(cfg);
  write_split_manifest(dir, data);
  std::cout << stats_json(data.stats).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-level text-ID spectral fusion recommender"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-epoch progress");

  CommonOptions train_o, eval_o, verify_o, ablate_o, bench_o, stats_o;
  auto* train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  add_common(train, train_o);

  auto* evaluate = app.add_subcommand("evaluate", "Full-sort evaluation of a checkpoint");
  add_common(evaluate, eval_o);
  std::string checkpoint, phase = "test";
  evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evaluate->add_option("--phase", phase, "valid or test")->check(CLI::IsMember({"valid", "test"}));

  auto* verify = app.add_subcommand("verify", "Run the oracle and gradient suites");
  add_common(verify, verify_o);
  std::optional<std::size_t> trials;
  bool inject_fault = false;
  verify->add_option("--trials", trials, "Random instances per suite (verify.trials)");
  verify->add_flag("--inject-fault", inject_fault, "Corrupt one FFT twiddle factor (negative control)");

  auto* ablate = app.add_subcommand("ablate", "Train the full model and the four ablation variants");
  add_common(ablate, ablate_o);

  auto* bench = app.add_subcommand("bench", "Time rfft and the mutual filter over bench.n_list");
  add_common(bench, bench_o);

  auto* stats = app.add_subcommand("stats", "Dataset statistics after filtering and splitting");
  add_common(stats, stats_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_o, quiet);
    if (*evaluate) return cmd_evaluate(eval_o, checkpoint, phase);
    if (*verify) return cmd_verify(verify_o, trials, inject_fault);
    if (*ablate) return cmd_ablate(ablate_o, quiet);
    if (*bench) return cmd_bench(bench_o);
    if (*stats) return cmd_stats(stats_o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
