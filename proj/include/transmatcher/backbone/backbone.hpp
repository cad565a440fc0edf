#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transmatcher/backbone/image.hpp"
#include "transmatcher/numcore/parameter.hpp"
#include "transmatcher/numcore/random.hpp"
#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::backbone {

using nc::ConfigError;

/// Toy convolutional stack: each block is conv3x3(stride 2) -> instance norm
/// -> ReLU, followed by a 3x3 stride-1 neck convolution to `out_dim` channels.
struct BackboneConfig {
  std::vector<std::size_t> block_channels{16, 32, 32};
  std::size_t out_dim = 32;
  std::size_t kernel = 3;

  std::size_t total_stride() const { return std::size_t{1} << block_channels.size(); }
  void validate() const;
};

/// (h*w) x d encoding of one image.
template <class T>
struct FeatureMap {
  std::size_t rows = 0;  // h*w
  std::size_t cols = 0;  // d
  nc::Tensor<T> tensor;  // [rows, cols]
  std::string source_image_id;
};

template <class T>
class Backbone {
 public:
  Backbone(BackboneConfig config, nc::ParameterSet<T>& params, nc::Rng& rng);

  const BackboneConfig& config() const { return config_; }

  /// Map geometry for an input size; throws ConfigError when the size is not
  /// divisible by the total stride.
  std::pair<std::size_t, std::size_t> map_size(std::size_t height, std::size_t width) const;

  /// [B,3,H,W] -> [B, h*w, d]. Differentiable.
  nc::Tensor<T> forward(const nc::Tensor<T>& images) const;

  /// Stacks images (all the same size) into [B,3,H,W].
  static nc::Tensor<T> to_tensor(std::span<const Image> images);
  static nc::Tensor<T> to_tensor(std::span<const Image* const> images);

  nc::Tensor<T> extract_batch(std::span<const Image> images) const {
    return forward(to_tensor(images));
  }
  FeatureMap<T> extract(const Image& image) const;

 private:
  struct Conv {
    nc::Tensor<T> weight;
    nc::Tensor<T> bias;
  };

  BackboneConfig config_;
  std::vector<Conv> blocks_;
  Conv neck_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace transmatcher::backbone
