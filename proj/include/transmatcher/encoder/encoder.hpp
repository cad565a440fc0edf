#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "transmatcher/numcore/parameter.hpp"
#include "transmatcher/numcore/random.hpp"
#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::encoder {

using nc::ConfigError;

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t D = 64;
  std::size_t H = 1;
  std::size_t layers = 2;
  bool pos_embed = false;
  /// Extra layer norm on the output of the last layer.
  bool final_norm = true;
  /// Sequence length h*w; needed only for the positional embedding.
  std::size_t seq_len = 0;
  double dropout = 0.0;  // not implemented; must stay 0

  std::size_t head_dim() const { return d / H; }
  void validate() const;
};

/// Per-head projections W_i^Q, W_i^K [d, d_k], W_i^V [d, d_v] and W^O [H*d_v, d].
template <class T>
struct AttentionParams {
  std::vector<nc::Tensor<T>> wq, wk, wv;
  nc::Tensor<T> wo;

  std::size_t heads() const { return wq.size(); }
};

/// Registers attention projections under `prefix`. With share_qk the key
/// projections alias the query ones.
template <class T>
AttentionParams<T> make_attention(nc::ParameterSet<T>& ps, const std::string& prefix,
                                  std::size_t d, std::size_t heads, nc::Rng& rng,
                                  bool share_qk = false);

/// softmax(Q K^T / sqrt(d_k)) V for Q [T,d_k] or batched [B,T,d_k]. The
/// attention weights are appended to `weights` when given.
template <class T>
nc::Tensor<T> scaled_dot_attention(const nc::Tensor<T>& q, const nc::Tensor<T>& k,
                                   const nc::Tensor<T>& v,
                                   std::vector<nc::Tensor<T>>* weights = nullptr);

/// Concat(head_1..head_H) W^O. Inputs are [T,d] or [B,T,d].
template <class T>
nc::Tensor<T> multi_head_attention(const nc::Tensor<T>& q, const nc::Tensor<T>& k,
                                   const nc::Tensor<T>& v, const AttentionParams<T>& params,
                                   std::vector<nc::Tensor<T>>* weights = nullptr);

template <class T>
struct EncoderLayerParams {
  AttentionParams<T> attn;
  nc::Tensor<T> norm1_weight, norm1_bias;
  nc::Tensor<T> ff1_weight, ff1_bias;  // [d, D], [D]
  nc::Tensor<T> ff2_weight, ff2_bias;  // [D, d], [d]
  nc::Tensor<T> norm2_weight, norm2_bias;
};

/// Position-wise feed-forward d -> D -> ReLU -> d on [..., d].
template <class T>
nc::Tensor<T> feed_forward(const nc::Tensor<T>& x, const nc::Tensor<T>& w1,
                           const nc::Tensor<T>& b1, const nc::Tensor<T>& w2,
                           const nc::Tensor<T>& b2);

/// Post-norm layer: x = LN(x + MHA(x,x,x)); x = LN(x + FF(x)).
template <class T>
nc::Tensor<T> encoder_layer_forward(const nc::Tensor<T>& x, const EncoderLayerParams<T>& layer,
                                    std::vector<nc::Tensor<T>>* weights = nullptr);

template <class T>
class Encoder {
 public:
  Encoder(EncoderConfig config, nc::ParameterSet<T>& params, nc::Rng& rng,
          const std::string& prefix = "encoder");

  const EncoderConfig& config() const { return config_; }
  std::size_t layers() const { return layers_.size(); }
  const EncoderLayerParams<T>& layer(std::size_t i) const { return layers_.at(i); }
  const nc::Tensor<T>& pos_embed() const { return pos_embed_; }
  const nc::Tensor<T>& final_norm_weight() const { return final_weight_; }
  const nc::Tensor<T>& final_norm_bias() const { return final_bias_; }

  /// Output of every layer for x [T,d] or [B,T,d]; the final norm (if any) is
  /// applied to the last entry only. Empty for a zero-layer stack.
  std::vector<nc::Tensor<T>> forward_all(const nc::Tensor<T>& x,
                                         std::vector<nc::Tensor<T>>* weights = nullptr) const;

  /// Last layer output; identity for a zero-layer stack.
  nc::Tensor<T> forward(const nc::Tensor<T>& x,
                        std::vector<nc::Tensor<T>>* weights = nullptr) const;

 private:
  nc::Tensor<T> embed(const nc::Tensor<T>& x) const;

  EncoderConfig config_;
  std::vector<EncoderLayerParams<T>> layers_;
  nc::Tensor<T> pos_embed_;
  nc::Tensor<T> final_weight_, final_bias_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace transmatcher::encoder
