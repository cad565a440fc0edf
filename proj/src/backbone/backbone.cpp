#include "transmatcher/backbone/backbone.hpp"

#include <string>

#include "transmatcher/backbone/conv.hpp"
#include "transmatcher/numcore/ops.hpp"

namespace transmatcher::backbone {

using nc::Tensor;

Image Image::flipped() const {
  Image out = *this;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = at(c, y, width - 1 - x);
    }
  }
  return out;
}

void Image::validate() const {
  if (data.size() != channels * height * width) {
    throw std::invalid_argument("image '" + image_id + "' has inconsistent pixel buffer");
  }
  for (const float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("image '" + image_id + "' has a pixel outside [0, 1]");
    }
  }
  if (identity_label < 0) {
    throw std::invalid_argument("image '" + image_id + "' has a negative identity label");
  }
}

void BackboneConfig::validate() const {
  if (out_dim == 0) throw ConfigError("backbone out_dim must be positive");
  if (kernel % 2 == 0) throw ConfigError("backbone kernel must be odd");
  for (auto c : block_channels) {
    if (c == 0) throw ConfigError("backbone block channels must be positive");
  }
}

template <class T>
Backbone<T>::Backbone(BackboneConfig config, nc::ParameterSet<T>& params, nc::Rng& rng)
    : config_(std::move(config)) {
  config_.validate();
  const std::size_t k = config_.kernel;
  std::size_t in = Image::channels;
  for (std::size_t i = 0; i < config_.block_channels.size(); ++i) {
    const std::size_t out = config_.block_channels[i];
    const std::string prefix = "backbone.block" + std::to_string(i) + ".conv.";
    Conv conv;
    conv.weight = params.add_fan_in(prefix + "weight", {out, in, k, k}, in * k * k, rng,
                                    nc::kBackboneGroup);
    conv.bias = params.add_fan_in(prefix + "bias", {out}, in * k * k, rng, nc::kBackboneGroup);
    blocks_.push_back(conv);
    in = out;
  }
  neck_.weight = params.add_fan_in("backbone.neck.weight", {config_.out_dim, in, k, k}, in * k * k,
                                   rng, nc::kBackboneGroup);
  neck_.bias = params.add_fan_in("backbone.neck.bias", {config_.out_dim}, in * k * k, rng,
                                 nc::kBackboneGroup);
}

template <class T>
std::pair<std::size_t, std::size_t> Backbone<T>::map_size(std::size_t height,
                                                          std::size_t width) const {
  const std::size_t s = config_.total_stride();
  if (height == 0 || width == 0 || height % s != 0 || width % s != 0) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by the backbone stride " + std::to_string(s));
  }
  return {height / s, width / s};
}

template <class T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != Image::channels) {
    throw nc::DimensionError("backbone expects [B,3,H,W], got " + nc::shape_str(images.shape()));
  }
  const auto [h, w] = map_size(images.dim(2), images.dim(3));
  Tensor<T> x = images;
  for (const auto& block : blocks_) {
    x = nc::relu(instance_norm(conv2d(x, block.weight, block.bias, 2)));
  }
  x = conv2d(x, neck_.weight, neck_.bias, 1);  // [B,d,h,w]
  const std::size_t B = x.dim(0);
  x = nc::permute(x, {0, 2, 3, 1});
  return nc::reshape(x, {B, h * w, config_.out_dim});
}

template <class T>
Tensor<T> Backbone<T>::to_tensor(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return to_tensor(std::span<const Image* const>(ptrs));
}

template <class T>
Tensor<T> Backbone<T>::to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw nc::DimensionError("backbone: empty image batch");
  const std::size_t H = images[0]->height, W = images[0]->width;
  const std::size_t per = Image::channels * H * W;
  std::vector<T> data(images.size() * per);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = *images[b];
    if (im.height != H || im.width != W) {
      throw nc::DimensionError("backbone: mixed image sizes in one batch");
    }
    for (std::size_t i = 0; i < per; ++i) data[b * per + i] = static_cast<T>(im.data[i]);
  }
  return Tensor<T>({images.size(), Image::channels, H, W}, std::move(data));
}

template <class T>
FeatureMap<T> Backbone<T>::extract(const Image& image) const {
  const Image* one[1] = {&image};
  auto maps = forward(to_tensor(std::span<const Image* const>(one, 1)));
  FeatureMap<T> fm;
  fm.rows = maps.dim(1);
  fm.cols = maps.dim(2);
  fm.tensor = nc::reshape(maps, {fm.rows, fm.cols});
  fm.source_image_id = image.image_id;
  return fm;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace transmatcher::backbone
