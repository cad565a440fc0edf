#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "transmatcher/evalcli/dataset.hpp"
#include "transmatcher/trainkit/trainkit.hpp"
#include "transmatcher/variants/variants.hpp"

namespace transmatcher::evalcli {

using nc::ConfigError;

/// Where a dataset comes from: a synthetic preset, or PNG directories.
struct DataSource {
  std::string name;
  std::string preset = "easy";
  std::uint64_t seed = 7;
  std::size_t identities = 16;
  std::size_t images_per_identity = 16;
  int first_label = 1;
  std::size_t queries_per_identity = 2;  // test sources only
  std::string directory;                 // train source from disk
  std::string query_dir, gallery_dir;    // test source from disk

  bool synthetic() const { return directory.empty() && query_dir.empty(); }
};

/// Everything a CLI run depends on. Image size and map geometry are derived
/// from the backbone, d from the model.
struct RunConfig {
  std::uint64_t seed = 7;
  int precision = 64;
  variants::ModelSpec model;
  trainkit::TrainConfig train;
  DataSource train_data;
  std::vector<DataSource> test;
  std::size_t repeats = 1;
  double far_rate = 0.001;

  /// Desk-scale defaults: easy preset for training, a held-out easy split
  /// and a domain-shifted split for testing.
  static RunConfig defaults();

  /// Re-derives h, w and the backbone width, then validates everything.
  void finalize();
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);

/// FNV-1a over the canonical JSON form.
std::uint64_t config_hash(const RunConfig& c);
std::string hex64(std::uint64_t v);

/// SHA-1 of "blob <size>\0" + content, as git computes object ids.
std::string git_blob_hash(const std::string& bytes);
std::string git_blob_hash_file(const std::string& path);

SyntheticSpec synthetic_spec(const DataSource& src, const RunConfig& c);
Dataset build_train_set(const RunConfig& c, std::vector<std::string>* warnings = nullptr);
std::pair<Dataset, Dataset> build_test_split(const DataSource& src, const RunConfig& c,
                                             std::vector<std::string>* warnings = nullptr);

}  // namespace transmatcher::evalcli
