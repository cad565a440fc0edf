#include "transmatcher/variants/variants.hpp"

#include "transmatcher/numcore/ops.hpp"

namespace transmatcher::variants {

using nc::Tensor;

ModelConfig table2_preset(ModelConfig base) {
  if (base.variant == Variant::transformer_cat || base.variant == Variant::transformer_cross) {
    base.d = 128;
    base.D = 512;
    base.N = 2;
  }
  return base;
}

namespace {

struct PairIndex {
  std::vector<std::size_t> q, g;
};

PairIndex all_pairs(std::size_t bq, std::size_t bg) {
  PairIndex idx;
  for (std::size_t i = 0; i < bq; ++i) {
    for (std::size_t j = 0; j < bg; ++j) {
      idx.q.push_back(i);
      idx.g.push_back(j);
    }
  }
  return idx;
}

template <class T>
Tensor<T> as_batch(const Tensor<T>& x, const ModelConfig& c) {
  auto b = x.rank() == 2 ? nc::reshape(x, {1, x.dim(0), x.dim(1)}) : x;
  if (b.rank() != 3 || b.dim(1) != c.hw() || b.dim(2) != c.d) {
    throw nc::DimensionError("feature maps " + nc::shape_str(x.shape()) +
                             " do not match the model geometry");
  }
  return b;
}

template <class T>
Tensor<T> pooled_logit(const Tensor<T>& seq, const Tensor<T>& w, const Tensor<T>& b) {
  return nc::linear(nc::mean_axis(seq, 1), w, b);  // [P,1]
}

encoder::EncoderConfig encoder_config(const ModelConfig& c, std::size_t seq_len) {
  auto e = c.encoder_config();
  e.seq_len = seq_len;
  return e;
}

}  // namespace

template <class T>
TransformerCat<T>::TransformerCat(ModelConfig config, nc::ParameterSet<T>& ps, nc::Rng& rng)
    : config_((config.validate(), std::move(config))),
      encoder_(encoder_config(config_, 2 * config_.hw()), ps, rng, "cat.encoder") {
  const std::size_t d = config_.d;
  seg_q_ = ps.add_uniform("cat.segment.query", {d}, 0.1, rng, nc::kNewGroup);
  seg_g_ = ps.add_uniform("cat.segment.gallery", {d}, 0.1, rng, nc::kNewGroup);
  head_w_ = ps.add_fan_in("cat.head.weight", {d, 1}, d, rng, nc::kNewGroup);
  head_b_ = ps.add_fan_in("cat.head.bias", {1}, d, rng, nc::kNewGroup);
}

template <class T>
Tensor<T> TransformerCat<T>::encode_pairs(const Tensor<T>& queries,
                                          const Tensor<T>& galleries) const {
  const auto q = as_batch(queries, config_), g = as_batch(galleries, config_);
  const auto idx = all_pairs(q.dim(0), g.dim(0));
  auto qr = nc::add_bias(nc::gather(q, std::span<const std::size_t>(idx.q)), seg_q_);
  auto gr = nc::add_bias(nc::gather(g, std::span<const std::size_t>(idx.g)), seg_g_);
  return encoder_.forward(nc::concat(std::vector<Tensor<T>>{qr, gr}, 1));
}

template <class T>
Tensor<T> TransformerCat<T>::score_batch(const Tensor<T>& queries, const Tensor<T>& galleries,
                                         bool) {
  const std::size_t bq = as_batch(queries, config_).dim(0);
  const std::size_t bg = as_batch(galleries, config_).dim(0);
  return nc::reshape(pooled_logit(encode_pairs(queries, galleries), head_w_, head_b_), {bq, bg});
}

template <class T>
Tensor<T> cross_decoder_layer_forward(const Tensor<T>& x, const Tensor<T>& memory,
                                      const CrossDecoderLayer<T>& L) {
  auto a = encoder::multi_head_attention(x, x, x, L.self_attn);
  auto y = nc::layer_norm(nc::add(x, a), L.norm1_weight, L.norm1_bias);
  auto c = encoder::multi_head_attention(y, memory, memory, L.cross_attn);
  y = nc::layer_norm(nc::add(y, c), L.norm2_weight, L.norm2_bias);
  auto f = encoder::feed_forward(y, L.ff1_weight, L.ff1_bias, L.ff2_weight, L.ff2_bias);
  return nc::layer_norm(nc::add(y, f), L.norm3_weight, L.norm3_bias);
}

template <class T>
TransformerCross<T>::TransformerCross(ModelConfig config, nc::ParameterSet<T>& ps, nc::Rng& rng)
    : config_((config.validate(), std::move(config))),
      encoder_(encoder_config(config_, config_.hw()), ps, rng, "cross.encoder") {
  const std::size_t d = config_.d, D = config_.D;
  const auto g = nc::kNewGroup;
  for (std::size_t l = 0; l < config_.N; ++l) {
    const std::string p = "cross.decoder." + std::to_string(l);
    CrossDecoderLayer<T> L;
    L.self_attn = encoder::make_attention(ps, p + ".self_attn", d, config_.H, rng);
    L.norm1_weight = ps.add_constant(p + ".norm1.weight", {d}, T(1), g);
    L.norm1_bias = ps.add_constant(p + ".norm1.bias", {d}, T(0), g);
    L.cross_attn =
        encoder::make_attention(ps, p + ".cross_attn", d, config_.H, rng, config_.shared_qk_fc);
    L.norm2_weight = ps.add_constant(p + ".norm2.weight", {d}, T(1), g);
    L.norm2_bias = ps.add_constant(p + ".norm2.bias", {d}, T(0), g);
    L.ff1_weight = ps.add_fan_in(p + ".ff1.weight", {d, D}, d, rng, g);
    L.ff1_bias = ps.add_fan_in(p + ".ff1.bias", {D}, d, rng, g);
    L.ff2_weight = ps.add_fan_in(p + ".ff2.weight", {D, d}, D, rng, g);
    L.ff2_bias = ps.add_fan_in(p + ".ff2.bias", {d}, D, rng, g);
    L.norm3_weight = ps.add_constant(p + ".norm3.weight", {d}, T(1), g);
    L.norm3_bias = ps.add_constant(p + ".norm3.bias", {d}, T(0), g);
    layers_.push_back(std::move(L));
  }
  const std::size_t heads = config_.multiscale_fusion ? config_.N : 1;
  for (std::size_t l = 0; l < heads; ++l) {
    const std::string p =
        config_.multiscale_fusion ? "cross.head." + std::to_string(l) + "." : "cross.head.";
    head_w_.push_back(ps.add_fan_in(p + "weight", {d, 1}, d, rng, g));
    head_b_.push_back(ps.add_fan_in(p + "bias", {1}, d, rng, g));
  }
}

template <class T>
std::vector<Tensor<T>> TransformerCross<T>::decode_pairs(const Tensor<T>& queries,
                                                         const Tensor<T>& galleries) const {
  const auto q = as_batch(queries, config_), g = as_batch(galleries, config_);
  const auto idx = all_pairs(q.dim(0), g.dim(0));
  auto memories = encoder_.forward_all(g);
  if (memories.empty()) memories.push_back(g);
  auto x = nc::gather(q, std::span<const std::size_t>(idx.q));
  std::vector<Tensor<T>> outs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& mem =
        config_.multiscale_fusion ? memories[std::min(l, memories.size() - 1)] : memories.back();
    x = cross_decoder_layer_forward(x, nc::gather(mem, std::span<const std::size_t>(idx.g)),
                                    layers_[l]);
    outs.push_back(x);
  }
  return outs;
}

template <class T>
Tensor<T> TransformerCross<T>::score_batch(const Tensor<T>& queries, const Tensor<T>& galleries,
                                           bool) {
  const std::size_t bq = as_batch(queries, config_).dim(0);
  const std::size_t bg = as_batch(galleries, config_).dim(0);
  const auto outs = decode_pairs(queries, galleries);
  Tensor<T> total;
  if (config_.multiscale_fusion) {
    for (std::size_t l = 0; l < outs.size(); ++l) {
      auto s = pooled_logit(outs[l], head_w_[l], head_b_[l]);
      total = l == 0 ? s : nc::add(total, s);
    }
  } else {
    total = pooled_logit(outs.back(), head_w_[0], head_b_[0]);
  }
  return nc::reshape(total, {bq, bg});
}

template <class T>
PlainEmbed<T>::PlainEmbed(ModelConfig config, nc::ParameterSet<T>& ps, nc::Rng& rng)
    : config_((config.validate(), std::move(config))),
      encoder_(encoder_config(config_, config_.hw()), ps, rng, "plain.encoder") {
  temperature_ = ps.add_constant("plain.temperature", {1}, T(5), nc::kNewGroup);
}

template <class T>
Tensor<T> PlainEmbed<T>::embed(const Tensor<T>& maps) const {
  return nc::l2_normalize_rows(nc::mean_axis(encoder_.forward(as_batch(maps, config_)), 1));
}

template <class T>
Tensor<T> PlainEmbed<T>::score_batch(const Tensor<T>& queries, const Tensor<T>& galleries, bool) {
  const auto eq = embed(queries);
  const auto eg = queries.same_storage(galleries) ? eq : embed(galleries);
  return nc::mul(nc::matmul(eq, nc::transpose(eg)), temperature_);
}

template <class T>
std::unique_ptr<Scorer<T>> make_scorer(const ModelConfig& config, nc::ParameterSet<T>& ps,
                                       nc::Rng& rng) {
  switch (config.variant) {
    case Variant::transmatcher: return std::make_unique<matcher::TransMatcher<T>>(config, ps, rng);
    case Variant::transformer_cat: return std::make_unique<TransformerCat<T>>(config, ps, rng);
    case Variant::transformer_cross: return std::make_unique<TransformerCross<T>>(config, ps, rng);
    case Variant::plain_embed: return std::make_unique<PlainEmbed<T>>(config, ps, rng);
  }
  throw nc::ConfigError("unknown variant");
}

void ModelSpec::validate() const {
  backbone.validate();
  model.validate();
  const std::size_t s = backbone.total_stride();
  if (image_height % s != 0 || image_width % s != 0) {
    throw nc::ConfigError("image size " + std::to_string(image_height) + "x" +
                          std::to_string(image_width) + " is not divisible by the backbone stride " +
                          std::to_string(s));
  }
  if (image_height / s != model.h || image_width / s != model.w) {
    throw nc::ConfigError("backbone produces " + std::to_string(image_height / s) + "x" +
                          std::to_string(image_width / s) + " maps but the model expects " +
                          std::to_string(model.h) + "x" + std::to_string(model.w));
  }
  if (backbone.out_dim != model.d) {
    throw nc::ConfigError("backbone output width " + std::to_string(backbone.out_dim) +
                          " differs from d = " + std::to_string(model.d));
  }
}

template <class T>
Model<T>::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  nc::Rng rng(seed);
  backbone_ = std::make_unique<backbone::Backbone<T>>(spec_.backbone, params_, rng);
  scorer_ = make_scorer<T>(spec_.model, params_, rng);
}

template <class T>
matcher::TransMatcher<T>* Model<T>::transmatcher() {
  return dynamic_cast<matcher::TransMatcher<T>*>(scorer_.get());
}

template <class T>
Tensor<T> Model<T>::features(std::span<const backbone::Image* const> images) const {
  return backbone_->forward(backbone::Backbone<T>::to_tensor(images));
}

#define TM_INSTANTIATE_VARIANTS(T)                                                            \
  template class TransformerCat<T>;                                                           \
  template class TransformerCross<T>;                                                         \
  template class PlainEmbed<T>;                                                               \
  template Tensor<T> cross_decoder_layer_forward(const Tensor<T>&, const Tensor<T>&,          \
                                                 const CrossDecoderLayer<T>&);                \
  template std::unique_ptr<Scorer<T>> make_scorer(const ModelConfig&, nc::ParameterSet<T>&,   \
                                                  nc::Rng&);                                  \
  template class Model<T>;

TM_INSTANTIATE_VARIANTS(float)
TM_INSTANTIATE_VARIANTS(double)

}  // namespace transmatcher::variants
