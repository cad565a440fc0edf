#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace transmatcher::backbone {

/// RGB image, channel-major (CHW), values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  static constexpr std::size_t channels = 3;
  std::vector<float> data;
  int identity_label = 0;
  std::string domain_tag;
  int camera_id = 0;
  /// Stable id used for deterministic tie-breaking (usually the file name).
  std::string image_id;

  Image() = default;
  Image(std::size_t h, std::size_t w) : height(h), width(w), data(channels * h * w, 0.0f) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  /// Mirror image around the vertical axis.
  Image flipped() const;
  /// Throws std::invalid_argument if a pixel lies outside [0, 1] or the label is negative.
  void validate() const;
};

}  // namespace transmatcher::backbone
