#include "transmatcher/encoder/encoder.hpp"

#include <cmath>

#include "transmatcher/numcore/ops.hpp"

namespace transmatcher::encoder {

using nc::Tensor;

void EncoderConfig::validate() const {
  if (d == 0 || D == 0 || H == 0) throw ConfigError("encoder dimensions must be positive");
  if (d % H != 0) {
    throw ConfigError("model dimension " + std::to_string(d) + " is not divisible by " +
                      std::to_string(H) + " heads");
  }
  if (pos_embed && layers > 0 && seq_len == 0) {
    throw ConfigError("positional embedding needs the sequence length");
  }
  if (dropout != 0.0) throw ConfigError("dropout is not supported; it must be 0");
}

template <class T>
AttentionParams<T> make_attention(nc::ParameterSet<T>& ps, const std::string& prefix,
                                  std::size_t d, std::size_t heads, nc::Rng& rng, bool share_qk) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model dimension " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  AttentionParams<T> p;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string suffix = "." + std::to_string(h);
    p.wq.push_back(ps.add_fan_in(prefix + ".wq" + suffix, {d, dk}, d, rng, nc::kNewGroup));
    if (share_qk) {
      p.wk.push_back(p.wq.back());
    } else {
      p.wk.push_back(ps.add_fan_in(prefix + ".wk" + suffix, {d, dk}, d, rng, nc::kNewGroup));
    }
    p.wv.push_back(ps.add_fan_in(prefix + ".wv" + suffix, {d, dk}, d, rng, nc::kNewGroup));
  }
  p.wo = ps.add_fan_in(prefix + ".wo", {heads * dk, d}, heads * dk, rng, nc::kNewGroup);
  return p;
}

template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::vector<Tensor<T>>* weights) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3)) {
    throw nc::DimensionError("attention expects matching rank-2 or rank-3 inputs");
  }
  if (q.rank() == 2) {
    auto out = scaled_dot_attention(nc::reshape(q, {1, q.dim(0), q.dim(1)}),
                                    nc::reshape(k, {1, k.dim(0), k.dim(1)}),
                                    nc::reshape(v, {1, v.dim(0), v.dim(1)}), weights);
    if (weights) {
      auto& w = weights->back();
      w = nc::reshape(w, {w.dim(1), w.dim(2)});
    }
    return nc::reshape(out, {q.dim(0), v.dim(1)});
  }
  if (q.dim(2) != k.dim(2)) {
    throw nc::DimensionError("query/key width mismatch: " + nc::shape_str(q.shape()) + " vs " +
                             nc::shape_str(k.shape()));
  }
  if (k.dim(1) != v.dim(1) || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0)) {
    throw nc::DimensionError("key/value shape mismatch: " + nc::shape_str(k.shape()) + " vs " +
                             nc::shape_str(v.shape()));
  }
  const T inv = T(1) / std::sqrt(static_cast<T>(q.dim(2)));
  auto scores = nc::scale(nc::bmm(q, nc::transpose(k)), inv);
  auto attn = nc::softmax(scores, 2);
  if (weights) weights->push_back(attn);
  return nc::bmm(attn, v);
}

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               const AttentionParams<T>& params, std::vector<Tensor<T>>* weights) {
  const bool batched = q.rank() == 3;
  if (!batched && q.rank() != 2) throw nc::DimensionError("attention input must be rank 2 or 3");
  const std::size_t d = q.shape().back();
  if (params.heads() == 0 || params.wq[0].dim(0) != d) {
    throw nc::DimensionError("attention input width " + std::to_string(d) +
                             " does not match the projections");
  }
  auto flat = [](const Tensor<T>& x) {
    return x.rank() == 3 ? nc::reshape(x, {x.dim(0) * x.dim(1), x.dim(2)}) : x;
  };
  auto unflat = [](const Tensor<T>& y, const Tensor<T>& like) {
    return like.rank() == 3 ? nc::reshape(y, {like.dim(0), like.dim(1), y.dim(1)}) : y;
  };
  const auto qf = flat(q), kf = flat(k), vf = flat(v);
  std::vector<Tensor<T>> heads;
  for (std::size_t h = 0; h < params.heads(); ++h) {
    heads.push_back(scaled_dot_attention(unflat(nc::matmul(qf, params.wq[h]), q),
                                         unflat(nc::matmul(kf, params.wk[h]), k),
                                         unflat(nc::matmul(vf, params.wv[h]), v), weights));
  }
  auto cat = heads.size() == 1 ? heads[0] : nc::concat(heads, q.rank() - 1);
  return unflat(nc::matmul(flat(cat), params.wo), q);
}

template <class T>
Tensor<T> feed_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                       const Tensor<T>& w2, const Tensor<T>& b2) {
  const std::size_t d = x.shape().back();
  const auto flat = nc::reshape(x, {x.numel() / d, d});
  auto y = nc::linear(nc::relu(nc::linear(flat, w1, b1)), w2, b2);
  return nc::reshape(y, x.shape());
}

template <class T>
Tensor<T> encoder_layer_forward(const Tensor<T>& x, const EncoderLayerParams<T>& layer,
                                std::vector<Tensor<T>>* weights) {
  auto a = multi_head_attention(x, x, x, layer.attn, weights);
  auto y = nc::layer_norm(nc::add(x, a), layer.norm1_weight, layer.norm1_bias);
  auto f = feed_forward(y, layer.ff1_weight, layer.ff1_bias, layer.ff2_weight, layer.ff2_bias);
  return nc::layer_norm(nc::add(y, f), layer.norm2_weight, layer.norm2_bias);
}

template <class T>
Encoder<T>::Encoder(EncoderConfig config, nc::ParameterSet<T>& ps, nc::Rng& rng,
                    const std::string& prefix)
    : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.d, D = config_.D;
  if (config_.layers == 0) return;
  if (config_.pos_embed) {
    pos_embed_ = ps.add_uniform(prefix + ".pos_embed", {config_.seq_len, d}, 0.1, rng,
                                nc::kNewGroup);
  }
  for (std::size_t i = 0; i < config_.layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    EncoderLayerParams<T> L;
    L.attn = make_attention(ps, p + ".attn", d, config_.H, rng);
    L.norm1_weight = ps.add_constant(p + ".norm1.weight", {d}, T(1), nc::kNewGroup);
    L.norm1_bias = ps.add_constant(p + ".norm1.bias", {d}, T(0), nc::kNewGroup);
    L.ff1_weight = ps.add_fan_in(p + ".ff1.weight", {d, D}, d, rng, nc::kNewGroup);
    L.ff1_bias = ps.add_fan_in(p + ".ff1.bias", {D}, d, rng, nc::kNewGroup);
    L.ff2_weight = ps.add_fan_in(p + ".ff2.weight", {D, d}, D, rng, nc::kNewGroup);
    L.ff2_bias = ps.add_fan_in(p + ".ff2.bias", {d}, D, rng, nc::kNewGroup);
    L.norm2_weight = ps.add_constant(p + ".norm2.weight", {d}, T(1), nc::kNewGroup);
    L.norm2_bias = ps.add_constant(p + ".norm2.bias", {d}, T(0), nc::kNewGroup);
    layers_.push_back(std::move(L));
  }
  if (config_.final_norm) {
    final_weight_ = ps.add_constant(prefix + ".final_norm.weight", {d}, T(1), nc::kNewGroup);
    final_bias_ = ps.add_constant(prefix + ".final_norm.bias", {d}, T(0), nc::kNewGroup);
  }
}

template <class T>
Tensor<T> Encoder<T>::embed(const Tensor<T>& x) const {
  if (x.shape().back() != config_.d) {
    throw nc::DimensionError("encoder expects width " + std::to_string(config_.d) + ", got " +
                             nc::shape_str(x.shape()));
  }
  if (!pos_embed_.defined()) return x;
  const std::size_t seq = x.rank() == 3 ? x.dim(1) : x.dim(0);
  if (seq != config_.seq_len) {
    throw nc::DimensionError("sequence length " + std::to_string(seq) +
                             " does not match the positional embedding");
  }
  return nc::add(x, x.rank() == 3 ? nc::repeat(pos_embed_, x.dim(0)) : pos_embed_);
}

template <class T>
std::vector<Tensor<T>> Encoder<T>::forward_all(const Tensor<T>& x,
                                               std::vector<Tensor<T>>* weights) const {
  std::vector<Tensor<T>> outs;
  if (layers_.empty()) return outs;
  auto h = embed(x);
  for (const auto& L : layers_) {
    h = encoder_layer_forward(h, L, weights);
    outs.push_back(h);
  }
  if (final_weight_.defined()) outs.back() = nc::layer_norm(outs.back(), final_weight_, final_bias_);
  return outs;
}

template <class T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& x, std::vector<Tensor<T>>* weights) const {
  auto outs = forward_all(x, weights);
  return outs.empty() ? x : outs.back();
}

#define TM_INSTANTIATE_ENCODER(T)                                                              \
  template AttentionParams<T> make_attention(nc::ParameterSet<T>&, const std::string&,        \
                                             std::size_t, std::size_t, nc::Rng&, bool);        \
  template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          std::vector<Tensor<T>>*);                            \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          const AttentionParams<T>&, std::vector<Tensor<T>>*); \
  template Tensor<T> feed_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                  const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> encoder_layer_forward(const Tensor<T>&, const EncoderLayerParams<T>&,     \
                                           std::vector<Tensor<T>>*);                           \
  template class Encoder<T>;

TM_INSTANTIATE_ENCODER(float)
TM_INSTANTIATE_ENCODER(double)

}  // namespace transmatcher::encoder
