#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tedrec/data.hpp"
#include "tedrec/error.hpp"

namespace tedrec {

// 1-based rank of `target` among items 1..|V| (scores[i - 1] belongs to item
// i). Items tied with the target are ranked above it.
template <class T>
std::size_t rank_ground_truth(std::span<const T> scores, std::size_t target) {
  if (target == 0) throw InvalidArgument("rank_ground_truth: target 0 is the padding item");
  if (target > scores.size()) throw InvalidArgument("rank_ground_truth: target outside the item set");
  const T t = scores[target - 1];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != target - 1 && scores[i] >= t) ++rank;
  }
  return rank;
}

inline double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw InvalidArgument("recall_at_k: empty user set");
  if (k == 0) throw InvalidArgument("recall_at_k: K must be at least 1");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

inline double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw InvalidArgument("ndcg_at_k: empty user set");
  if (k == 0) throw InvalidArgument("ndcg_at_k: K must be at least 1");
  double sum = 0.0;
  for (auto r : ranks) {
    if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  }
  return sum / static_cast<double>(ranks.size());
}

enum class Phase { Valid, Test };

inline const char* phase_name(Phase p) { return p == Phase::Valid ? "valid" : "test"; }

inline Phase parse_phase(const std::string& s) {
  if (s == "valid") return Phase::Valid;
  if (s == "test") return Phase::Test;
  throw InvalidArgument("phase must be 'valid' or 'test', got '" + s + "'");
}

struct EvalConfig {
  std::vector<std::size_t> ks{10, 20};
  std::vector<std::size_t> group_edges{0, 5, 20};  // buckets [e_i, e_{i+1}), last open-ended
  bool mask_history = false;
  std::size_t workers = 1;
};

struct MetricAtK {
  std::size_t k = 0;
  double recall = 0.0;
  double ndcg = 0.0;
};

struct GroupMetrics {
  std::size_t edge_lo = 0;
  std::size_t edge_hi = 0;  // SIZE_MAX = unbounded
  std::size_t users = 0;
  std::vector<MetricAtK> metrics;
};

struct EvalResult {
  Phase phase = Phase::Valid;
  std::vector<MetricAtK> metrics;
  std::vector<GroupMetrics> groups;
  double runtime_seconds = 0.0;
  std::size_t skipped = 0;
  std::vector<std::size_t> ranks;         // per evaluated user
  std::vector<std::size_t> train_counts;  // per evaluated user

  const MetricAtK& at(std::size_t k) const {
    for (const auto& m : metrics) {
      if (m.k == k) return m;
    }
    throw InvalidArgument("metrics at K=" + std::to_string(k) + " were not computed");
  }
};

inline std::vector<MetricAtK> metrics_for(std::span<const std::size_t> ranks, const std::vector<std::size_t>& ks) {
  std::vector<MetricAtK> out;
  for (auto k : ks) out.push_back({k, recall_at_k(ranks, k), ndcg_at_k(ranks, k)});
  return out;
}

// Scores every user's context against the full item set and aggregates
// Recall@K / NDCG@K. `scorer(context)` returns one score per item 1..|V|;
// any order-preserving transform of the softmax probabilities is valid.
template <class Scorer>
EvalResult full_sort_evaluate(const DatasetSplit& split, Phase phase, const Scorer& scorer, const EvalConfig& cfg = {}) {
  if (cfg.ks.empty()) throw InvalidArgument("full_sort_evaluate: no K values");
  if (cfg.group_edges.empty()) throw InvalidArgument("full_sort_evaluate: no group edges");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t users = split.num_users();
  std::vector<std::size_t> rank(users, 0);

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t u = lo; u < hi; ++u) {
      const auto ctx = phase == Phase::Valid ? split.valid_context(u) : split.test_context(u);
      const auto target = phase == Phase::Valid ? split.valid_target(u) : split.test_target(u);
      if (ctx.empty()) continue;
      auto scores = scorer(ctx);
      if (scores.size() != split.num_items()) throw InvalidArgument("full_sort_evaluate: scorer returned wrong size");
      if (cfg.mask_history) {
        using S = typename decltype(scores)::value_type;
        for (auto id : ctx) {
          if (id != target) scores[id - 1] = -std::numeric_limits<S>::infinity();
        }
      }
      rank[u] = rank_ground_truth<typename decltype(scores)::value_type>(scores, target);
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, users));
  if (workers == 1) {
    work(0, users);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (users + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w * chunk, std::min(users, (w + 1) * chunk));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  EvalResult r;
  r.phase = phase;
  for (std::size_t u = 0; u < users; ++u) {
    if (rank[u] == 0) {
      ++r.skipped;
      continue;
    }
    r.ranks.push_back(rank[u]);
    r.train_counts.push_back(split.train_items(u).size());
  }
  if (r.ranks.empty()) throw DataError("full_sort_evaluate: no user has a non-empty context");
  r.metrics = metrics_for(r.ranks, cfg.ks);

  for (std::size_t g = 0; g < cfg.group_edges.size(); ++g) {
    GroupMetrics gm;
    gm.edge_lo = cfg.group_edges[g];
    gm.edge_hi = g + 1 < cfg.group_edges.size() ? cfg.group_edges[g + 1] : std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < r.ranks.size(); ++i) {
      if (r.train_counts[i] >= gm.edge_lo && r.train_counts[i] < gm.edge_hi) members.push_back(r.ranks[i]);
    }
    gm.users = members.size();
    if (!members.empty()) gm.metrics = metrics_for(members, cfg.ks);
    r.groups.push_back(std::move(gm));
  }
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline nlohmann::ordered_json metrics_json(const std::vector<MetricAtK>& ms) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& m : ms) j[std::to_string(m.k)] = {{"recall", m.recall}, {"ndcg", m.ndcg}};
  return j;
}

inline nlohmann::ordered_json to_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["phase"] = phase_name(r.phase);
  for (const auto& m : r.metrics) j[std::to_string(m.k)] = {{"recall", m.recall}, {"ndcg", m.ndcg}};
  auto groups = nlohmann::ordered_json::array();
  for (const auto& g : r.groups) {
    nlohmann::ordered_json gj;
    gj["edge_lo"] = g.edge_lo;
    if (g.edge_hi == std::numeric_limits<std::size_t>::max()) {
      gj["edge_hi"] = nullptr;
    } else {
      gj["edge_hi"] = g.edge_hi;
    }
    gj["n_users"] = g.users;
    for (const auto& m : g.metrics) gj[std::to_string(m.k)] = {{"recall", m.recall}, {"ndcg", m.ndcg}};
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  j["skipped_users"] = r.skipped;
  j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

}  // namespace tedrec
