// tedrec-synth: writes a synthetic dataset (interactions.tsv, embeddings.bin,
// embeddings.items.tsv) into a directory.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "tedrec/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic dataset generator"};
  std::string kind = "rotation", out = ".";
  tedrec::RotationSpec rot;
  tedrec::ClusterSpec clu;
  std::size_t users = 200, min_len = 10, max_len = 20, text_dim = 16;
  std::uint64_t seed = 1;
  app.add_option("--kind", kind, "rotation or text-cluster")->check(CLI::IsMember({"rotation", "text-cluster"}));
  app.add_option("--out", out, "Output directory");
  app.add_option("--users", users, "Number of users");
  app.add_option("--items", rot.items, "Items in the rotation");
  app.add_option("--clusters", clu.clusters, "Text clusters (text-cluster)");
  app.add_option("--items-per-cluster", clu.items_per_cluster, "Items per cluster (text-cluster)");
  app.add_option("--text-noise", clu.text_noise, "Std-dev of item text around its centroid (text-cluster)");
  app.add_option("--min-length", min_len, "Shortest user sequence");
  app.add_option("--max-length", max_len, "Longest user sequence");
  app.add_option("--text-dim", text_dim, "Text embedding width");
  app.add_option("--seed", seed, "Random seed");
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out);
    tedrec::SyntheticDataset ds;
    if (kind == "rotation") {
      rot.users = users;
      rot.min_length = min_len;
      rot.max_length = max_len;
      rot.text_dim = text_dim;
      rot.seed = seed;
      ds = tedrec::make_rotation_dataset(rot);
    } else {
      clu.users = users;
      clu.min_length = min_len;
      clu.max_length = max_len;
      clu.text_dim = text_dim;
      clu.seed = seed;
      ds = tedrec::make_text_cluster_dataset(clu);
    }
    ds.write(out);
    std::cout << "wrote " << ds.interactions.size() << " interactions over " << ds.item_tokens.size() - 1
              << " items to " << out << '\n';
  } catch (const tedrec::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const tedrec::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
