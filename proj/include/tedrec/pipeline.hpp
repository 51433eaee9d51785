#pragma once

// Config-driven glue: interactions + embeddings on disk -> split + aligned
// text store, and the manifest files written next to run outputs.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "tedrec/config.hpp"
#include "tedrec/data.hpp"
#include "tedrec/fusion.hpp"

namespace tedrec {

struct PreparedData {
  DatasetSplit split;
  std::shared_ptr<const TextEmbeddingStore> text;
  DatasetStats stats;
  std::size_t raw_records = 0;
  std::size_t malformed = 0;
  std::size_t duplicates = 0;
};

inline InteractionLog load_any_interactions(const std::string& path) {
  if (path.ends_with(".dat")) return load_movielens_ratings(path);
  return load_interactions(path);
}

// Default companion map for "x/embeddings.bin" is "x/embeddings.items.tsv".
inline std::string default_embedding_map(const std::string& embeddings) {
  std::filesystem::path p(embeddings);
  p.replace_extension(".items.tsv");
  return p.string();
}

inline PreparedData prepare_split(const RunConfig& cfg) {
  const auto inter = cfg.get<std::string>("data.interactions");
  if (inter.empty()) throw UsageError("data.interactions is required");
  PreparedData out;
  InteractionLog log = load_any_interactions(inter);
  out.raw_records = log.records.size();
  out.malformed = log.malformed;
  out.duplicates = log.duplicates;
  if (cfg.get<bool>("data.five_core")) log = five_core_filter(log);
  out.split = split_leave_one_out(log);
  out.stats = dataset_stats(out.split);
  return out;
}

inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out = prepare_split(cfg);
  const auto emb = cfg.get<std::string>("data.embeddings");
  if (emb.empty()) throw UsageError("data.embeddings is required");
  auto map_path = cfg.get<std::string>("data.embedding_map");
  if (map_path.empty()) map_path = default_embedding_map(emb);
  const auto store = TextEmbeddingStore::load(emb);
  if (store.rows() < out.split.num_items() + 1) {
    throw DataError("embedding rows (" + std::to_string(store.rows()) + ") < item count + 1 (" +
                    std::to_string(out.split.num_items() + 1) + ")");
  }
  out.text = std::make_shared<const TextEmbeddingStore>(
      align_text_embeddings(out.split, store, load_embedding_item_map(map_path)));
  return out;
}

inline nlohmann::ordered_json stats_json(const DatasetStats& s) {
  return {{"users", s.users},
          {"items", s.items},
          {"interactions", s.interactions},
          {"sparsity", s.sparsity},
          {"sparsity_plain", s.sparsity_plain}};
}

// split.json plus users.tsv / items.tsv id maps in `dir`.
inline void write_split_manifest(const std::string& dir, const PreparedData& d) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["raw_records"] = d.raw_records;
  j["malformed_rows"] = d.malformed;
  j["duplicate_rows"] = d.duplicates;
  j["stats"] = stats_json(d.stats);
  std::size_t train = 0;
  for (std::size_t u = 0; u < d.split.num_users(); ++u) train += d.split.train_items(u).size();
  j["counts"] = {{"train_items", train}, {"valid_targets", d.split.num_users()}, {"test_targets", d.split.num_users()}};
  j["id_maps"] = {{"users", "users.tsv"}, {"items", "items.tsv"}};
  std::ofstream out(dir + "/split.json");
  if (!out) throw IoError("cannot write " + dir + "/split.json");
  out << j.dump(2) << '\n';
  write_id_map(dir + "/users.tsv", d.split.user_tokens, 0);
  write_id_map(dir + "/items.tsv", d.split.item_tokens, 1);
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace tedrec
