#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "transmatcher/backbone/backbone.hpp"
#include "transmatcher/encoder/encoder.hpp"
#include "transmatcher/matcher/matcher.hpp"

namespace transmatcher::variants {

using matcher::ModelConfig;
using matcher::Scorer;
using matcher::Variant;

/// Memory-constrained comparison setting for the soft-attention variants:
/// d=128, D=512, N=2. Other variants keep the given config.
ModelConfig table2_preset(ModelConfig base);

/// Concatenates query and gallery maps into one 2*hw sequence (plus a
/// learned segment embedding marking the halves), encodes it, mean-pools and
/// maps to a logit with one FC.
template <class T>
class TransformerCat : public Scorer<T> {
 public:
  TransformerCat(ModelConfig config, nc::ParameterSet<T>& params, nc::Rng& rng);
  nc::Tensor<T> score_batch(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries,
                            bool training) override;
  std::string name() const override { return "transformer_cat"; }

  /// Encoded pair sequences [P, 2hw, d].
  nc::Tensor<T> encode_pairs(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries) const;

  const encoder::Encoder<T>& encoder() const { return encoder_; }
  const nc::Tensor<T>& query_segment() const { return seg_q_; }
  const nc::Tensor<T>& gallery_segment() const { return seg_g_; }
  const nc::Tensor<T>& head_weight() const { return head_w_; }
  const nc::Tensor<T>& head_bias() const { return head_b_; }

 private:
  ModelConfig config_;
  encoder::Encoder<T> encoder_;
  nc::Tensor<T> seg_q_, seg_g_;  // [d]
  nc::Tensor<T> head_w_, head_b_;
};

template <class T>
struct CrossDecoderLayer {
  encoder::AttentionParams<T> self_attn, cross_attn;
  nc::Tensor<T> norm1_weight, norm1_bias;
  nc::Tensor<T> norm2_weight, norm2_bias;
  nc::Tensor<T> ff1_weight, ff1_bias, ff2_weight, ff2_bias;
  nc::Tensor<T> norm3_weight, norm3_bias;
};

/// Post-norm vanilla decoder layer: self-attention on x, cross-attention with
/// K = V = memory, feed-forward.
template <class T>
nc::Tensor<T> cross_decoder_layer_forward(const nc::Tensor<T>& x, const nc::Tensor<T>& memory,
                                          const CrossDecoderLayer<T>& layer);

/// Gallery maps go through the encoder; the raw query map is the decoder
/// input. Final decoder output is mean-pooled and mapped to a logit. With
/// multiscale fusion decoder layer l attends to encoder layer l and the
/// per-layer pooled scores are summed.
template <class T>
class TransformerCross : public Scorer<T> {
 public:
  TransformerCross(ModelConfig config, nc::ParameterSet<T>& params, nc::Rng& rng);
  nc::Tensor<T> score_batch(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries,
                            bool training) override;
  std::string name() const override { return "transformer_cross"; }

  /// Decoder outputs of every layer, each [P, hw, d].
  std::vector<nc::Tensor<T>> decode_pairs(const nc::Tensor<T>& queries,
                                          const nc::Tensor<T>& galleries) const;

  const encoder::Encoder<T>& encoder() const { return encoder_; }
  const std::vector<CrossDecoderLayer<T>>& layers() const { return layers_; }
  const nc::Tensor<T>& head_weight(std::size_t l) const { return head_w_.at(l); }
  const nc::Tensor<T>& head_bias(std::size_t l) const { return head_b_.at(l); }

 private:
  ModelConfig config_;
  encoder::Encoder<T> encoder_;
  std::vector<CrossDecoderLayer<T>> layers_;
  std::vector<nc::Tensor<T>> head_w_, head_b_;
};

/// Independent encodings, mean-pooled and L2-normalized; logit = tau * cosine.
template <class T>
class PlainEmbed : public Scorer<T> {
 public:
  PlainEmbed(ModelConfig config, nc::ParameterSet<T>& params, nc::Rng& rng);
  nc::Tensor<T> score_batch(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries,
                            bool training) override;
  std::string name() const override { return "plain_embed"; }

  /// [B, hw, d] -> unit-norm [B, d].
  nc::Tensor<T> embed(const nc::Tensor<T>& maps) const;
  const encoder::Encoder<T>& encoder() const { return encoder_; }
  const nc::Tensor<T>& temperature() const { return temperature_; }

 private:
  ModelConfig config_;
  encoder::Encoder<T> encoder_;
  nc::Tensor<T> temperature_;
};

template <class T>
std::unique_ptr<Scorer<T>> make_scorer(const ModelConfig& config, nc::ParameterSet<T>& params,
                                       nc::Rng& rng);

/// Everything that defines a trainable model.
struct ModelSpec {
  backbone::BackboneConfig backbone{{16, 32, 32}, 32, 3};
  ModelConfig model;
  std::size_t image_height = 48;
  std::size_t image_width = 16;

  /// Checks the backbone geometry against model.h / model.w.
  void validate() const;
};

/// Backbone plus scorer with its own parameter registry.
template <class T>
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  nc::ParameterSet<T>& params() { return params_; }
  const nc::ParameterSet<T>& params() const { return params_; }
  const backbone::Backbone<T>& backbone() const { return *backbone_; }
  Scorer<T>& scorer() { return *scorer_; }
  /// Null unless the variant is TransMatcher.
  matcher::TransMatcher<T>* transmatcher();

  /// [B, hw, d] feature maps.
  nc::Tensor<T> features(std::span<const backbone::Image* const> images) const;

  nc::Tensor<T> score(const nc::Tensor<T>& query_maps, const nc::Tensor<T>& gallery_maps,
                      bool training) {
    return scorer_->score_batch(query_maps, gallery_maps, training);
  }

 private:
  ModelSpec spec_;
  nc::ParameterSet<T> params_;
  std::unique_ptr<backbone::Backbone<T>> backbone_;
  std::unique_ptr<Scorer<T>> scorer_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace transmatcher::variants
