#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tedrec/error.hpp"
#include "tedrec/fusion.hpp"

namespace tedrec {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  std::size_t order = 0;  // position in the input file
};

// Records grouped by user (users in order of first appearance), each user's
// records sorted by (timestamp, input order).
struct InteractionLog {
  std::vector<Interaction> records;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view strip_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

// Integer seconds or an ordinal; integral decimals like "978300760.0" accepted.
inline bool parse_timestamp(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && p == s.data() + s.size()) return true;
  double v = 0;
  auto [q, ec2] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec2 != std::errc() || q != s.data() + s.size() || !std::isfinite(v) || v != std::floor(v)) return false;
  out = static_cast<std::int64_t>(v);
  return true;
}

}  // namespace detail

// Drops repeated (user, item, timestamp) triples (keeping the first) and
// orders records per user by (timestamp, input order).
inline InteractionLog normalize_log(std::vector<Interaction> raw, std::size_t malformed = 0) {
  InteractionLog log;
  log.malformed = malformed;
  std::unordered_map<std::string, std::size_t> user_rank;
  std::unordered_set<std::string> seen;
  std::vector<Interaction> kept;
  kept.reserve(raw.size());
  for (auto& r : raw) {
    std::string key = r.user;
    key += '\x1f';
    key += r.item;
    key += '\x1f';
    key += std::to_string(r.timestamp);
    if (!seen.insert(std::move(key)).second) {
      ++log.duplicates;
      continue;
    }
    user_rank.try_emplace(r.user, user_rank.size());
    kept.push_back(std::move(r));
  }
  std::stable_sort(kept.begin(), kept.end(), [&](const Interaction& a, const Interaction& b) {
    const auto ua = user_rank.at(a.user), ub = user_rank.at(b.user);
    if (ua != ub) return ua < ub;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.order < b.order;
  });
  log.records = std::move(kept);
  return log;
}

// TSV with header "user_id<TAB>item_id<TAB>timestamp".
inline InteractionLog load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interactions file " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  if (detail::strip_cr(line) != "user_id\titem_id\ttimestamp") {
    throw IoError(path + ": bad header (expected user_id<TAB>item_id<TAB>timestamp)");
  }
  std::vector<Interaction> raw;
  std::size_t rows = 0, malformed = 0;
  while (std::getline(in, line)) {
    const auto view = detail::strip_cr(line);
    if (view.empty()) continue;
    ++rows;
    const auto f = detail::split_tabs(view);
    Interaction r;
    if (f.size() != 3 || f[0].empty() || f[1].empty() || !detail::parse_timestamp(f[2], r.timestamp)) {
      ++malformed;
      continue;
    }
    r.user = std::string(f[0]);
    r.item = std::string(f[1]);
    r.order = rows - 1;
    raw.push_back(std::move(r));
  }
  if (malformed * 100 > rows) {
    throw DataError(path + ": " + std::to_string(malformed) + " of " + std::to_string(rows) +
                    " rows malformed (limit 1%)");
  }
  return normalize_log(std::move(raw), malformed);
}

// MovieLens "UserID::MovieID::Rating::Timestamp" (ratings.dat); every rating
// counts as an interaction.
inline InteractionLog load_movielens_ratings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ratings file " + path);
  std::string line;
  std::vector<Interaction> raw;
  std::size_t rows = 0, malformed = 0;
  while (std::getline(in, line)) {
    const auto view = detail::strip_cr(line);
    if (view.empty()) continue;
    ++rows;
    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      const auto pos = view.find("::", start);
      f.push_back(view.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 2;
    }
    Interaction r;
    if (f.size() != 4 || f[0].empty() || f[1].empty() || !detail::parse_timestamp(f[3], r.timestamp)) {
      ++malformed;
      continue;
    }
    r.user = std::string(f[0]);
    r.item = std::string(f[1]);
    r.order = rows - 1;
    raw.push_back(std::move(r));
  }
  if (malformed * 100 > rows) throw DataError(path + ": too many malformed rows");
  return normalize_log(std::move(raw), malformed);
}

// Repeatedly removes users and items with fewer than `k` records until every
// remaining user and item has at least `k`.
inline InteractionLog k_core_filter(const InteractionLog& log, std::size_t k) {
  std::vector<char> alive(log.records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> users, items;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (!alive[i]) continue;
      ++users[log.records[i].user];
      ++items[log.records[i].item];
    }
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (!alive[i]) continue;
      const auto& r = log.records[i];
      if (users[r.user] < k || items[r.item] < k) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  InteractionLog out;
  out.malformed = log.malformed;
  out.duplicates = log.duplicates;
  for (std::size_t i = 0; i < alive.size(); ++i) {
    if (alive[i]) out.records.push_back(log.records[i]);
  }
  if (out.records.empty()) throw DataError("dataset vanished under five-core");
  return out;
}

inline InteractionLog five_core_filter(const InteractionLog& log) { return k_core_filter(log, 5); }

struct DatasetSplit {
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;  // index = item id; [0] = "" (padding)
  std::vector<std::vector<std::size_t>> sequences;  // full chronological item ids per user

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_items() const { return item_tokens.size() - 1; }
  std::size_t num_interactions() const {
    std::size_t s = 0;
    for (const auto& q : sequences) s += q.size();
    return s;
  }

  std::span<const std::size_t> train_items(std::size_t u) const {
    return std::span<const std::size_t>(sequences[u]).first(sequences[u].size() - 2);
  }
  std::span<const std::size_t> valid_context(std::size_t u) const { return train_items(u); }
  std::size_t valid_target(std::size_t u) const { return sequences[u][sequences[u].size() - 2]; }
  std::span<const std::size_t> test_context(std::size_t u) const {
    return std::span<const std::size_t>(sequences[u]).first(sequences[u].size() - 1);
  }
  std::size_t test_target(std::size_t u) const { return sequences[u].back(); }

  std::unordered_map<std::string, std::size_t> item_index() const {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 1; i < item_tokens.size(); ++i) m.emplace(item_tokens[i], i);
    return m;
  }
};

// Leave-one-out: last item = test target, second-to-last = validation target,
// the rest = training. Users keep log order; items get ids 1..|V| in order of
// first appearance in the input file.
inline DatasetSplit split_leave_one_out(const InteractionLog& log) {
  DatasetSplit s;
  s.item_tokens.emplace_back();
  std::vector<const Interaction*> by_order;
  by_order.reserve(log.records.size());
  for (const auto& r : log.records) by_order.push_back(&r);
  std::stable_sort(by_order.begin(), by_order.end(), [](auto a, auto b) { return a->order < b->order; });
  std::unordered_map<std::string, std::size_t> item_id;
  for (const auto* r : by_order) {
    if (item_id.try_emplace(r->item, s.item_tokens.size()).second) s.item_tokens.push_back(r->item);
  }
  std::unordered_map<std::string, std::size_t> user_id;
  for (const auto& r : log.records) {
    auto [it, inserted] = user_id.try_emplace(r.user, s.user_tokens.size());
    if (inserted) {
      s.user_tokens.push_back(r.user);
      s.sequences.emplace_back();
    }
    s.sequences[it->second].push_back(item_id.at(r.item));
  }
  for (std::size_t u = 0; u < s.sequences.size(); ++u) {
    if (s.sequences[u].size() < 3) {
      throw DataError("user " + s.user_tokens[u] + " has " + std::to_string(s.sequences[u].size()) +
                      " interactions; leave-one-out needs at least 3");
    }
  }
  return s;
}

struct TrainingSample {
  std::size_t user = 0;
  std::size_t end = 0;  // target position in the user's sequence
};

struct SequenceBatch {
  std::size_t n = 0;  // logical sequence length (row width)
  std::vector<std::size_t> ids;  // B x n, right-aligned, left-padded with 0
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> users;

  std::size_t size() const { return targets.size(); }
  std::span<const std::size_t> row(std::size_t b) const { return std::span<const std::size_t>(ids).subspan(b * n, n); }
  // The valid (non-pad) part of row b, oldest first.
  std::span<const std::size_t> context(std::size_t b) const { return row(b).last(lengths[b]); }
};

// One sample per training-prefix position j >= 1: context = items before j
// (truncated to the last n), target = item at j.
inline std::vector<TrainingSample> training_samples(const DatasetSplit& s) {
  std::vector<TrainingSample> out;
  for (std::size_t u = 0; u < s.num_users(); ++u) {
    const auto train = s.train_items(u);
    for (std::size_t j = 1; j < train.size(); ++j) out.push_back({u, j});
  }
  return out;
}

inline std::vector<SequenceBatch> make_training_batches(const DatasetSplit& s, std::size_t n, std::size_t batch_size,
                                                        std::uint64_t shuffle_seed) {
  if (n < 2) throw InvalidArgument("make_training_batches: n must be at least 2");
  if (batch_size == 0) throw InvalidArgument("make_training_batches: batch size must be positive");
  auto samples = training_samples(s);
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<SequenceBatch> batches;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - start);
    SequenceBatch b;
    b.n = n;
    b.ids.assign(count * n, 0);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& smp = samples[start + i];
      const auto& seq = s.sequences[smp.user];
      const std::size_t len = std::min(smp.end, n);
      std::copy(seq.begin() + static_cast<std::ptrdiff_t>(smp.end - len), seq.begin() + static_cast<std::ptrdiff_t>(smp.end),
                b.ids.begin() + static_cast<std::ptrdiff_t>((i + 1) * n - len));
      b.lengths.push_back(len);
      b.targets.push_back(seq[smp.end]);
      b.users.push_back(smp.user);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  // Counts the padding user/item slot, as common benchmark tooling does.
  double sparsity = 0.0;
  double sparsity_plain = 0.0;  // 1 - interactions / (users * items)
};

inline DatasetStats dataset_stats(const DatasetSplit& s) {
  DatasetStats st;
  st.users = s.num_users();
  st.items = s.num_items();
  st.interactions = s.num_interactions();
  const double inter = static_cast<double>(st.interactions);
  st.sparsity = 1.0 - inter / (static_cast<double>(st.users + 1) * static_cast<double>(st.items + 1));
  st.sparsity_plain = 1.0 - inter / (static_cast<double>(st.users) * static_cast<double>(st.items));
  return st;
}

// Text embeddings reordered so that row i belongs to internal item id i.
// `token_row` maps item tokens to rows of `store` (the companion TSV).
inline TextEmbeddingStore align_text_embeddings(const DatasetSplit& s, const TextEmbeddingStore& store,
                                                const std::unordered_map<std::string, std::size_t>& token_row) {
  std::vector<std::size_t> source(s.item_tokens.size(), 0);
  for (std::size_t i = 1; i < s.item_tokens.size(); ++i) {
    auto it = token_row.find(s.item_tokens[i]);
    if (it == token_row.end()) throw DataError("no text embedding for item " + s.item_tokens[i]);
    source[i] = it->second;
  }
  return store.remapped(source);
}

inline void write_id_map(const std::string& path, const std::vector<std::string>& tokens, std::size_t first) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "token\tid\n";
  for (std::size_t i = first; i < tokens.size(); ++i) out << tokens[i] << '\t' << i << '\n';
}

}  // namespace tedrec
