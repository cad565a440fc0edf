#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "transmatcher/backbone/image.hpp"

namespace transmatcher::evalcli {

using backbone::Image;

struct Dataset {
  std::string name;
  std::string split;  // train, query, gallery
  std::string domain_tag;
  std::vector<Image> images;
};

/// Procedural "person" identities: head, torso, legs and an accessory blob,
/// each with its own color, on a uniform domain-tinted background.
struct SyntheticSpec {
  std::size_t n_identities = 16;
  std::size_t images_per_identity = 16;
  std::size_t height = 48;
  std::size_t width = 16;
  std::string domain_tag = "A";
  int first_label = 1;
  std::uint64_t seed = 7;

  // Palette
  std::array<double, 3> background{0.5, 0.5, 0.5};
  std::array<double, 3> channel_gain{1.0, 1.0, 1.0};

  // Nuisances
  int max_shift = 2;         // pixels, both axes
  double brightness = 0.1;   // factor drawn from [1 - b, 1 + b]
  double noise_sigma = 0.02;
  double occlusion_prob = 0.0;

  void validate() const;
};

/// Low-nuisance same-domain preset.
SyntheticSpec easy_preset(std::uint64_t seed = 7);
/// Domain-shifted preset: color cast, other background, stronger nuisances.
SyntheticSpec shifted_preset(std::uint64_t seed = 11);
/// Looks up "easy" or "shifted"; throws std::invalid_argument otherwise.
SyntheticSpec preset_by_name(const std::string& name, std::uint64_t seed);

/// Deterministic in spec.seed; pixel values are multiples of 1/255 so that
/// PNG round trips are exact. Throws std::invalid_argument for zero identities.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// First `per_identity` images of each identity become queries, the rest gallery.
std::pair<Dataset, Dataset> split_query_gallery(const Dataset& all, std::size_t per_identity);

struct MarketName {
  int identity = 0;
  int camera = 0;
  int sequence = 0;
  int frame = 0;
};

/// "0001_c1s1_000151_00.jpg" -> identity 1, camera 1. Empty on mismatch.
std::optional<MarketName> parse_market_name(const std::string& filename);

std::string market_name(int identity, int camera, int frame);

struct LoadResult {
  Dataset dataset;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Loads every PNG below `path`. Unparseable names and unreadable files are
/// skipped with a warning; duplicate names throw std::runtime_error.
LoadResult load_directory(const std::string& path);

/// Writes 8-bit PNGs named by image_id (plus ".png").
void save_directory(const Dataset& dataset, const std::string& path);

void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

}  // namespace transmatcher::evalcli
