#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tedrec/error.hpp"
#include "tedrec/eval.hpp"
#include "tedrec/model.hpp"
#include "tedrec/train.hpp"

namespace tedrec {

class UsageError : public Error {
 public:
  using Error::Error;
};

// Flat dotted-key configuration. Precedence, lowest first: built-in defaults,
// config file, TEDREC_* environment variables, --set overrides, dedicated flags.
class RunConfig {
 public:
  using Json = nlohmann::ordered_json;

  RunConfig() : values_(defaults()) {}

  static Json defaults() {
    return Json{
        {"data.interactions", ""},
        {"data.embeddings", ""},
        {"data.embedding_map", ""},
        {"data.five_core", true},
        {"model.d", 64},
        {"model.layers", 2},
        {"model.heads", 2},
        {"model.d_ff", 256},
        {"model.max_len", 50},
        {"model.experts", 8},
        {"model.temperature", 1.0},
        {"model.dropout", 0.2},
        {"model.noise_std", 0.01},
        {"model.init_std", 0.02},
        {"model.modulation_std", 0.02},
        {"model.filter_init", "identity"},
        {"model.norm", "post"},
        {"model.precision", "float32"},
        {"ablation.moe_modulation", true},
        {"ablation.adaptive_gate", true},
        {"ablation.id_filter", true},
        {"ablation.text_fusion", true},
        {"optim.lr", 1e-3},
        {"optim.beta1", 0.9},
        {"optim.beta2", 0.999},
        {"optim.eps", 1e-8},
        {"optim.batch_size", 2048},
        {"optim.max_epochs", 300},
        {"optim.patience", 10},
        {"eval.ks", Json::array({10, 20})},
        {"eval.group_edges", Json::array({0, 5, 20})},
        {"eval.mask_history", false},
        {"eval.select_k", 10},
        {"run.seed", 42},
        {"run.workers", 1},
        {"run.out", "runs/latest"},
        {"verify.trials", 100},
        {"bench.n_list", Json::array({512, 1024, 2048, 4096})},
        {"bench.d", 64},
        {"bench.reps", 20},
    };
  }

  const Json& values() const { return values_; }
  bool has(const std::string& key) const { return values_.contains(key); }

  template <class V>
  V get(const std::string& key) const {
    require_known(key);
    try {
      return values_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config key '" + key + "' has the wrong type: " + e.what());
    }
  }

  // Typed assignment from a JSON value; the type must match the default.
  void set_json(const std::string& key, const Json& v) {
    require_known(key);
    const auto& def = default_values().at(key);
    const bool ok = (def.is_boolean() && v.is_boolean()) || (def.is_number_integer() && v.is_number_integer()) ||
                    (def.is_number_float() && v.is_number()) || (def.is_string() && v.is_string()) ||
                    (def.is_array() && v.is_array());
    if (!ok) throw UsageError("config key '" + key + "' expects " + std::string(def.type_name()) + ", got " + v.dump());
    if (def.is_number_integer() && v.is_number_integer() && v.get<std::int64_t>() < 0) {
      throw UsageError("config key '" + key + "' must be non-negative");
    }
    values_[key] = def.is_number_float() ? Json(v.get<double>()) : v;
  }

  // Parses `text` according to the type of the key's default value.
  void set_string(const std::string& key, const std::string& text) {
    require_known(key);
    const auto& def = default_values().at(key);
    if (def.is_string()) {
      set_json(key, text);
      return;
    }
    if (def.is_boolean()) {
      if (text == "true" || text == "1") return set_json(key, true);
      if (text == "false" || text == "0") return set_json(key, false);
      throw UsageError("config key '" + key + "' expects true/false, got '" + text + "'");
    }
    if (def.is_array()) {
      Json arr = Json::array();
      std::stringstream ss(text.starts_with('[') ? text.substr(1, text.size() - 2) : text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        arr.push_back(parse_number(key, item, true));
      }
      return set_json(key, arr);
    }
    set_json(key, parse_number(key, text, def.is_number_integer()));
  }

  // "key=value" as given to --set.
  void apply_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
    set_string(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw UsageError(path + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError(path + ": config must be a JSON object of dotted keys");
    for (auto it = j.begin(); it != j.end(); ++it) set_json(it.key(), it.value());
  }

  static std::string env_name(const std::string& key) {
    std::string out = "TEDREC_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
  }

  void apply_env(const std::function<const char*(const char*)>& getenv_fn = [](const char* n) { return std::getenv(n); }) {
    for (auto it = values_.begin(); it != values_.end(); ++it) {
      const std::string key = it.key();
      if (const char* v = getenv_fn(env_name(key).c_str())) set_string(key, v);
    }
  }

  ModelConfig model_config(std::size_t num_items, std::size_t text_dim) const {
    ModelConfig m;
    m.num_items = num_items;
    m.text_dim = text_dim;
    m.d = get<std::size_t>("model.d");
    m.layers = get<std::size_t>("model.layers");
    m.heads = get<std::size_t>("model.heads");
    m.d_ff = get<std::size_t>("model.d_ff");
    m.max_len = get<std::size_t>("model.max_len");
    m.experts = get<std::size_t>("model.experts");
    m.temperature = get<double>("model.temperature");
    m.dropout = get<double>("model.dropout");
    m.noise_std = get<double>("model.noise_std");
    m.init_std = get<double>("model.init_std");
    m.modulation_std = get<double>("model.modulation_std");
    m.filter_init = get<std::string>("model.filter_init");
    const auto norm = get<std::string>("model.norm");
    if (norm != "post" && norm != "pre") throw UsageError("model.norm must be 'post' or 'pre'");
    m.pre_norm = norm == "pre";
    m.switches.use_moe_modulation = get<bool>("ablation.moe_modulation");
    m.switches.use_adaptive_gate = get<bool>("ablation.adaptive_gate");
    m.switches.use_id_filter = get<bool>("ablation.id_filter");
    m.switches.use_text_fusion = get<bool>("ablation.text_fusion");
    return m;
  }

  EvalConfig eval_config() const {
    EvalConfig e;
    e.ks = get<std::vector<std::size_t>>("eval.ks");
    e.group_edges = get<std::vector<std::size_t>>("eval.group_edges");
    e.mask_history = get<bool>("eval.mask_history");
    e.workers = get<std::size_t>("run.workers");
    for (auto k : e.ks) {
      if (k == 0) throw UsageError("eval.ks entries must be at least 1");
    }
    if (e.ks.empty() || e.group_edges.empty()) throw UsageError("eval.ks and eval.group_edges must be non-empty");
    if (!std::is_sorted(e.group_edges.begin(), e.group_edges.end())) throw UsageError("eval.group_edges must be sorted");
    return e;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.batch_size = get<std::size_t>("optim.batch_size");
    t.max_epochs = get<std::size_t>("optim.max_epochs");
    t.patience = get<std::size_t>("optim.patience");
    t.adam.lr = get<double>("optim.lr");
    t.adam.beta1 = get<double>("optim.beta1");
    t.adam.beta2 = get<double>("optim.beta2");
    t.adam.eps = get<double>("optim.eps");
    t.seed = get<std::uint64_t>("run.seed");
    t.workers = std::max<std::size_t>(1, get<std::size_t>("run.workers"));
    t.eval = eval_config();
    t.select_k = get<std::size_t>("eval.select_k");
    if (t.batch_size == 0) throw UsageError("optim.batch_size must be positive");
    if (t.adam.lr < 0) throw UsageError("optim.lr must be non-negative");
    return t;
  }

 private:
  static const Json& default_values() {
    static const Json d = defaults();
    return d;
  }

  static void require_known(const std::string& key) {
    if (!default_values().contains(key)) throw UsageError("unknown config key '" + key + "'");
  }

  static Json parse_number(const std::string& key, const std::string& text, bool integer) {
    try {
      std::size_t used = 0;
      if (integer) {
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return Json(v);
      } else {
        const double v = std::stod(text, &used);
        if (used == text.size()) return Json(v);
      }
    } catch (const std::exception&) {
    }
    throw UsageError("config key '" + key + "' expects a" + std::string(integer ? "n integer" : " number") + ", got '" +
                     text + "'");
  }

  Json values_;
};

}  // namespace tedrec
