#include "transmatcher/matcher/matcher.hpp"

#include <ostream>

namespace transmatcher::matcher {

using nc::Tensor;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::transmatcher: return "transmatcher";
    case Variant::transformer_cat: return "transformer_cat";
    case Variant::transformer_cross: return "transformer_cross";
    case Variant::plain_embed: return "plain_embed";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::transmatcher, Variant::transformer_cat, Variant::transformer_cross,
                 Variant::plain_embed}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

std::size_t ModelConfig::encoder_layers() const {
  if (variant != Variant::transmatcher) return N;
  return use_raw_first_pair ? N - 1 : N;
}

encoder::EncoderConfig ModelConfig::encoder_config() const {
  encoder::EncoderConfig e;
  e.d = d;
  e.D = D;
  e.H = H;
  e.layers = encoder_layers();
  e.pos_embed = pos_embed;
  e.final_norm = encoder_final_norm;
  e.seq_len = hw();
  return e;
}

void ModelConfig::validate() const {
  const bool encoder_only = variant == Variant::transformer_cat || variant == Variant::plain_embed;
  if (N == 0 && !encoder_only) throw ConfigError("N must be at least 1 for " + variant_name(variant));
  if (d == 0 || D == 0 || h == 0 || w == 0) throw ConfigError("model dimensions must be positive");
  if (!mlphead2) throw ConfigError("mlphead2 cannot be disabled");
  if (H == 0 || d % H != 0) throw ConfigError("d must be divisible by H");
}

DecoderFlags decoder_flags(const ModelConfig& c) {
  return DecoderFlags{c.fc1, c.bn1, c.mlphead1, c.prior_embed, c.fuse_after_bn3};
}

template <class T>
DecoderLayer<T> make_decoder_layer(const ModelConfig& c, std::size_t index,
                                   nc::ParameterSet<T>& ps, nc::Rng& rng) {
  const std::string p = "decoder." + std::to_string(index) + ".";
  const std::size_t hw = c.hw(), d = c.d, D = c.D;
  const auto g = nc::kNewGroup;
  DecoderLayer<T> L;
  auto add_bn = [&](const std::string& name, std::size_t ch, Tensor<T>& gamma, Tensor<T>& beta,
                    nc::BatchNormState<T>& state) {
    gamma = ps.add_constant(p + name + ".weight", {ch}, T(1), g);
    beta = ps.add_constant(p + name + ".bias", {ch}, T(0), g);
    state = nc::BatchNormState<T>(ch);
    ps.add_buffer(p + name + ".running_mean", state.running_mean);
    ps.add_buffer(p + name + ".running_var", state.running_var);
  };
  if (c.fc1) L.W = ps.add_fan_in(p + "W", {d, d}, d, rng, g);
  if (c.prior_embed) L.R = ps.add_constant(p + "R", {hw, hw}, T(0), g);
  if (c.bn1) add_bn("bn1", hw, L.bn1_weight, L.bn1_bias, L.bn1);
  std::size_t head_in = hw;
  if (c.mlphead1) {
    L.fc2_weight = ps.add_fan_in(p + "fc2.weight", {hw, D}, hw, rng, g);
    L.fc2_bias = ps.add_fan_in(p + "fc2.bias", {D}, hw, rng, g);
    add_bn("bn2", D, L.bn2_weight, L.bn2_bias, L.bn2);
    head_in = D;
  }
  L.fc3_weight = ps.add_fan_in(p + "fc3.weight", {head_in, 1}, head_in, rng, g);
  L.fc3_bias = ps.add_fan_in(p + "fc3.bias", {1}, head_in, rng, g);
  add_bn("bn3", 1, L.bn3_weight, L.bn3_bias, L.bn3);
  return L;
}

namespace {

template <class T>
Tensor<T> as_batch(const Tensor<T>& x) {
  if (x.rank() == 2) return nc::reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3) throw nc::DimensionError("feature maps must be [hw,d] or [B,hw,d]");
  return x;
}

template <class T>
void copy_data(const Tensor<T>& t, std::vector<T>& out) {
  out.assign(t.data().begin(), t.data().end());
}

}  // namespace

template <class T>
Tensor<T> decode_layer(const Tensor<T>& q_in, const Tensor<T>& k_in, DecoderLayer<T>& L,
                       const DecoderFlags& f, bool training, LayerTrace<T>* trace) {
  const auto q = as_batch(q_in), k = as_batch(k_in);
  if (q.dim(1) != k.dim(1) || q.dim(2) != k.dim(2)) {
    throw nc::DimensionError("query/gallery geometry mismatch: " + nc::shape_str(q.shape()) +
                             " vs " + nc::shape_str(k.shape()));
  }
  const std::size_t Bq = q.dim(0), Bg = k.dim(0), hw = q.dim(1), d = q.dim(2), P = Bq * Bg;
  if (f.prior_embed && (!L.R.defined() || L.R.dim(0) != hw)) {
    throw nc::DimensionError("prior embedding does not match map size " + std::to_string(hw));
  }
  auto qf = nc::reshape(q, {Bq * hw, d});
  auto kf = nc::reshape(k, {Bg * hw, d});
  if (f.fc1) {
    qf = nc::matmul(qf, L.W);
    kf = nc::matmul(kf, L.W);
  }
  auto s = nc::matmul(qf, nc::transpose(kf));
  s = nc::reshape(nc::permute(nc::reshape(s, {Bq, hw, Bg, hw}), {0, 2, 1, 3}), {P, hw, hw});
  auto sp = s;
  if (f.prior_embed) {
    auto r_eff = nc::scale(nc::add(L.R, nc::transpose(L.R)), T(0.5));
    sp = nc::mul(s, nc::repeat(nc::sigmoid(r_eff), P));
  }
  auto fwd = nc::max_reduce_argmax(sp, 2);
  auto rev = nc::max_reduce_argmax(sp, 1);

  auto x = nc::concat(std::vector<Tensor<T>>{fwd.values, rev.values}, 0);  // [2P,hw]
  if (f.bn1) x = nc::batch_norm(x, L.bn1, L.bn1_weight, L.bn1_bias, training);
  if (f.mlphead1) {
    x = nc::linear(x, L.fc2_weight, L.fc2_bias);
    x = nc::relu(nc::batch_norm(x, L.bn2, L.bn2_weight, L.bn2_bias, training));
  }
  x = nc::linear(x, L.fc3_weight, L.fc3_bias);
  Tensor<T> score;
  if (f.fuse_after_bn3) {
    x = nc::batch_norm(x, L.bn3, L.bn3_weight, L.bn3_bias, training);
    score = nc::add(nc::slice(x, 0, 0, P), nc::slice(x, 0, P, 2 * P));
  } else {
    score = nc::add(nc::slice(x, 0, 0, P), nc::slice(x, 0, P, 2 * P));
    score = nc::batch_norm(score, L.bn3, L.bn3_weight, L.bn3_bias, training);
  }
  score = nc::reshape(score, {Bq, Bg});

  if (trace) {
    trace->pairs = P;
    trace->hw = hw;
    copy_data(s, trace->s);
    copy_data(sp, trace->s_prime);
    copy_data(fwd.values, trace->fwd_values);
    copy_data(rev.values, trace->rev_values);
    trace->fwd_index = fwd.indices.data;
    trace->rev_index = rev.indices.data;
    copy_data(score, trace->layer_score);
  }
  return score;
}

template <class T>
TransMatcher<T>::TransMatcher(ModelConfig config, nc::ParameterSet<T>& ps, nc::Rng& rng)
    : config_((config.validate(), std::move(config))),
      encoder_(config_.encoder_config(), ps, rng, "encoder") {
  for (std::size_t n = 0; n < config_.N; ++n) {
    decoders_.push_back(make_decoder_layer(config_, n, ps, rng));
  }
}

template <class T>
Tensor<T> TransMatcher<T>::forward(const Tensor<T>& queries, const Tensor<T>& galleries,
                                   bool training, DecoderState<T>* state) {
  const auto q = as_batch(queries), g = as_batch(galleries);
  if (q.dim(1) != config_.hw() || q.dim(2) != config_.d) {
    throw nc::DimensionError("feature maps " + nc::shape_str(q.shape()) +
                             " do not match the model geometry");
  }
  const bool same = queries.same_storage(galleries);
  const auto qe = encoder_.forward_all(q);
  const auto ge = same ? qe : encoder_.forward_all(g);

  std::vector<Tensor<T>> qs, gs;
  if (config_.use_raw_first_pair) {
    qs.push_back(q);
    gs.push_back(g);
  }
  qs.insert(qs.end(), qe.begin(), qe.end());
  gs.insert(gs.end(), ge.begin(), ge.end());

  if (state) {
    *state = DecoderState<T>{};
    state->queries = q.dim(0);
    state->galleries = g.dim(0);
    state->w = config_.w;
    state->layers.resize(config_.N);
  }
  const auto flags = decoder_flags(config_);
  Tensor<T> total;
  for (std::size_t n = 0; n < config_.N; ++n) {
    auto s = decode_layer(qs[n], gs[n], decoders_[n], flags, training,
                          state ? &state->layers[n] : nullptr);
    total = n == 0 ? s : nc::add(total, s);
    if (state) state->running.emplace_back(total.data().begin(), total.data().end());
  }
  return total;
}

template <class T>
std::vector<Correspondence> extract_correspondences(const DecoderState<T>& state, std::size_t qi,
                                                    std::size_t gi, double threshold) {
  if (!state.retained()) throw nc::UsageError("decoder state was not retained");
  if (qi >= state.queries || gi >= state.galleries) {
    throw std::out_of_range("pair index outside the scored batch");
  }
  const std::size_t p = qi * state.galleries + gi;
  std::vector<Correspondence> out;
  for (std::size_t n = 0; n < state.layers.size(); ++n) {
    const auto& L = state.layers[n];
    const std::size_t hw = L.hw;
    for (std::size_t i = 0; i < hw; ++i) {
      const double v = L.fwd_values[p * hw + i];
      if (v > threshold) out.push_back({n, 0, i, L.fwd_index[p * hw + i], v});
    }
    for (std::size_t j = 0; j < hw; ++j) {
      const double v = L.rev_values[p * hw + j];
      if (v > threshold) out.push_back({n, 1, L.rev_index[p * hw + j], j, v});
    }
  }
  return out;
}

template <class T>
PairScore make_pair_score(const DecoderState<T>& state, std::size_t qi, std::size_t gi,
                          std::string query_id, std::string gallery_id, double threshold) {
  PairScore ps;
  ps.query_id = std::move(query_id);
  ps.gallery_id = std::move(gallery_id);
  ps.score = state.running.back()[qi * state.galleries + gi];
  ps.matches = extract_correspondences(state, qi, gi, threshold);
  return ps;
}

void write_matches_csv(std::ostream& out, const std::vector<PairScore>& pairs, std::size_t w) {
  out << kMatchesHeader << '\n';
  out.precision(17);
  for (const auto& p : pairs) {
    for (const auto& m : p.matches) {
      out << p.query_id << ',' << p.gallery_id << ',' << m.layer << ','
          << (m.direction == 0 ? "forward" : "reverse") << ',' << m.query_pos / w << ','
          << m.query_pos % w << ',' << m.gallery_pos / w << ',' << m.gallery_pos % w << ','
          << m.local_score << '\n';
    }
  }
}

#define TM_INSTANTIATE_MATCHER(T)                                                              \
  template DecoderLayer<T> make_decoder_layer(const ModelConfig&, std::size_t,                 \
                                              nc::ParameterSet<T>&, nc::Rng&);                 \
  template Tensor<T> decode_layer(const Tensor<T>&, const Tensor<T>&, DecoderLayer<T>&,         \
                                  const DecoderFlags&, bool, LayerTrace<T>*);                  \
  template class TransMatcher<T>;                                                              \
  template std::vector<Correspondence> extract_correspondences(const DecoderState<T>&,          \
                                                               std::size_t, std::size_t, double); \
  template PairScore make_pair_score(const DecoderState<T>&, std::size_t, std::size_t,          \
                                     std::string, std::string, double);

TM_INSTANTIATE_MATCHER(float)
TM_INSTANTIATE_MATCHER(double)

}  // namespace transmatcher::matcher
