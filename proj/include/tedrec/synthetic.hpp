#pragma once

// Generators for small datasets with a known next-item rule.

#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tedrec/data.hpp"
#include "tedrec/fusion.hpp"

namespace tedrec {

struct SyntheticDataset {
  std::vector<Interaction> interactions;
  TextEmbeddingStore text;  // row r belongs to item token item_tokens[r]
  std::vector<std::string> item_tokens;  // [0] unused

  InteractionLog log() const { return normalize_log(interactions); }
  std::unordered_map<std::string, std::size_t> token_rows() const {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t r = 1; r < item_tokens.size(); ++r) m.emplace(item_tokens[r], r);
    return m;
  }

  // Writes <dir>/interactions.tsv, <dir>/embeddings.bin, <dir>/embeddings.items.tsv.
  void write(const std::string& dir) const {
    {
      std::ofstream out(dir + "/interactions.tsv");
      if (!out) throw IoError("cannot write " + dir + "/interactions.tsv");
      out << "user_id\titem_id\ttimestamp\n";
      for (const auto& r : interactions) out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
    }
    text.save(dir + "/embeddings.bin");
    std::ofstream map(dir + "/embeddings.items.tsv");
    if (!map) throw IoError("cannot write " + dir + "/embeddings.items.tsv");
    map << "item_id\trow\n";
    for (std::size_t r = 1; r < item_tokens.size(); ++r) map << item_tokens[r] << '\t' << r << '\n';
  }
};

struct RotationSpec {
  std::size_t users = 200;
  std::size_t items = 60;
  std::size_t min_length = 10;
  std::size_t max_length = 20;
  std::size_t text_dim = 16;
  std::uint64_t seed = 1;
};

// Each user starts at a random item and walks the fixed cycle 1 -> 2 -> ... ->
// items -> 1. Text embeddings are random and carry no signal.
inline SyntheticDataset make_rotation_dataset(const RotationSpec& spec) {
  if (spec.items == 0 || spec.min_length < 5 || spec.max_length < spec.min_length) {
    throw InvalidArgument("rotation dataset: need items > 0 and 5 <= min_length <= max_length");
  }
  std::mt19937_64 rng(spec.seed);
  SyntheticDataset ds;
  ds.item_tokens.emplace_back();
  for (std::size_t i = 1; i <= spec.items; ++i) ds.item_tokens.push_back("item" + std::to_string(i));
  std::uniform_int_distribution<std::size_t> start(0, spec.items - 1), len(spec.min_length, spec.max_length);
  std::size_t order = 0;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t s = start(rng), l = len(rng);
    for (std::size_t t = 0; t < l; ++t) {
      ds.interactions.push_back({"user" + std::to_string(u), ds.item_tokens[(s + t) % spec.items + 1],
                                 static_cast<std::int64_t>(t), order++});
    }
  }
  Matrix<float> table(spec.items + 1, spec.text_dim);
  std::normal_distribution<float> nd;
  for (std::size_t r = 1; r <= spec.items; ++r) {
    for (auto& v : table.row(r)) v = nd(rng);
  }
  ds.text = TextEmbeddingStore(std::move(table));
  return ds;
}

struct ClusterSpec {
  std::size_t users = 200;
  std::size_t clusters = 6;
  std::size_t items_per_cluster = 10;
  std::size_t min_length = 10;
  std::size_t max_length = 20;
  std::size_t text_dim = 16;
  double text_noise = 0.1;  // item text = cluster centroid + N(0, text_noise^2)
  std::uint64_t seed = 1;
};

// Clusters follow the cycle 0 -> 1 -> ... -> clusters-1 -> 0; the item inside
// each cluster is drawn uniformly at random, so item ids by themselves carry
// no order. Item text embeddings sit near their cluster's centroid, and
// cluster membership is visible only through the text.
inline SyntheticDataset make_text_cluster_dataset(const ClusterSpec& spec) {
  if (spec.clusters == 0 || spec.items_per_cluster == 0 || spec.min_length < 5 || spec.max_length < spec.min_length) {
    throw InvalidArgument("text-cluster dataset: need clusters, items_per_cluster > 0 and 5 <= min_length <= max_length");
  }
  std::mt19937_64 rng(spec.seed);
  const std::size_t items = spec.clusters * spec.items_per_cluster;
  // Random assignment of item tokens to clusters.
  std::vector<std::size_t> perm(items);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  SyntheticDataset ds;
  ds.item_tokens.emplace_back();
  for (std::size_t i = 1; i <= items; ++i) ds.item_tokens.push_back("item" + std::to_string(i));
  // cluster_items[c] = item rows (1-based) in cluster c
  std::vector<std::vector<std::size_t>> cluster_items(spec.clusters);
  for (std::size_t i = 0; i < items; ++i) cluster_items[perm[i] % spec.clusters].push_back(i + 1);

  std::normal_distribution<float> nd;
  Matrix<float> centroids(spec.clusters, spec.text_dim);
  for (auto& v : centroids.flat()) v = nd(rng);
  Matrix<float> table(items + 1, spec.text_dim);
  for (std::size_t c = 0; c < spec.clusters; ++c) {
    for (auto row : cluster_items[c]) {
      for (std::size_t k = 0; k < spec.text_dim; ++k) {
        table(row, k) = centroids(c, k) + static_cast<float>(spec.text_noise) * nd(rng);
      }
    }
  }
  ds.text = TextEmbeddingStore(std::move(table));

  std::uniform_int_distribution<std::size_t> start(0, spec.clusters - 1), len(spec.min_length, spec.max_length),
      pick(0, spec.items_per_cluster - 1);
  std::size_t order = 0;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t s = start(rng), l = len(rng);
    for (std::size_t t = 0; t < l; ++t) {
      const auto& members = cluster_items[(s + t) % spec.clusters];
      ds.interactions.push_back({"user" + std::to_string(u), ds.item_tokens[members[pick(rng) % members.size()]],
                                 static_cast<std::int64_t>(t), order++});
    }
  }
  return ds;
}

}  // namespace tedrec
