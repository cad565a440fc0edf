#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "transmatcher/encoder/encoder.hpp"
#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/parameter.hpp"
#include "transmatcher/numcore/random.hpp"

namespace transmatcher::matcher {

using nc::ConfigError;

enum class Variant { transmatcher, transformer_cat, transformer_cross, plain_embed };

std::string variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);

struct ModelConfig {
  std::size_t d = 32;
  std::size_t D = 64;
  std::size_t H = 1;
  std::size_t N = 2;
  std::size_t h = 6;
  std::size_t w = 2;

  bool fc1 = true;
  bool bn1 = true;
  bool mlphead1 = true;
  bool mlphead2 = true;  // always on; FC3/BN3 are the minimal head
  bool prior_embed = true;
  bool pos_embed = false;

  bool use_raw_first_pair = true;
  /// Sum the two GMP directions after BN3 (true) or between FC3 and BN3.
  bool fuse_after_bn3 = true;
  bool encoder_final_norm = true;

  Variant variant = Variant::transmatcher;
  // variant options
  bool shared_qk_fc = false;
  bool multiscale_fusion = false;

  std::size_t hw() const { return h * w; }
  std::size_t encoder_layers() const;
  encoder::EncoderConfig encoder_config() const;
  void validate() const;
};

/// Switches that change the per-layer decoding pipeline.
struct DecoderFlags {
  bool fc1 = true;
  bool bn1 = true;
  bool mlphead1 = true;
  bool prior_embed = true;
  bool fuse_after_bn3 = true;
};

DecoderFlags decoder_flags(const ModelConfig& c);

template <class T>
struct DecoderLayer {
  nc::Tensor<T> W;  // [d,d], shared by query and gallery
  nc::Tensor<T> R;  // [hw,hw] raw prior; R_eff = (R + R^T)/2
  nc::Tensor<T> bn1_weight, bn1_bias;
  nc::Tensor<T> fc2_weight, fc2_bias;  // [hw,D]
  nc::Tensor<T> bn2_weight, bn2_bias;
  nc::Tensor<T> fc3_weight, fc3_bias;  // [D or hw, 1]
  nc::Tensor<T> bn3_weight, bn3_bias;
  nc::BatchNormState<T> bn1, bn2, bn3;
};

template <class T>
DecoderLayer<T> make_decoder_layer(const ModelConfig& c, std::size_t index,
                                   nc::ParameterSet<T>& ps, nc::Rng& rng);

/// Retained intermediates of one decoder layer for P = Bq*Bg pairs, pair
/// p = qi*Bg + gi. Row-major [P,hw,hw] maps and [P,hw] GMP results.
template <class T>
struct LayerTrace {
  std::size_t pairs = 0, hw = 0;
  std::vector<T> s;        // Q'K'^T
  std::vector<T> s_prime;  // after the prior weighting
  std::vector<T> fwd_values, rev_values;
  std::vector<std::size_t> fwd_index, rev_index;
  std::vector<T> layer_score;  // [P]
};

template <class T>
struct DecoderState {
  std::size_t queries = 0, galleries = 0, w = 0;
  std::vector<LayerTrace<T>> layers;
  std::vector<std::vector<T>> running;  // S''''_n per layer, [P]

  bool retained() const { return !layers.empty(); }
};

/// One simplified decoder layer over all query/gallery pairs.
/// q [Bq,hw,d], k [Bg,hw,d] (rank 2 means a single map) -> [Bq,Bg] layer scores.
template <class T>
nc::Tensor<T> decode_layer(const nc::Tensor<T>& q, const nc::Tensor<T>& k, DecoderLayer<T>& layer,
                           const DecoderFlags& flags, bool training,
                           LayerTrace<T>* trace = nullptr);

/// Score every (query, gallery) pair; [Bq,hw,d] x [Bg,hw,d] -> [Bq,Bg] logits.
template <class T>
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual nc::Tensor<T> score_batch(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries,
                                    bool training) = 0;
  virtual std::string name() const = 0;
};

template <class T>
class TransMatcher : public Scorer<T> {
 public:
  TransMatcher(ModelConfig config, nc::ParameterSet<T>& params, nc::Rng& rng);

  nc::Tensor<T> score_batch(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries,
                            bool training) override {
    return forward(queries, galleries, training, nullptr);
  }
  std::string name() const override { return "transmatcher"; }

  nc::Tensor<T> forward(const nc::Tensor<T>& queries, const nc::Tensor<T>& galleries, bool training,
                        DecoderState<T>* state);

  const ModelConfig& config() const { return config_; }
  std::vector<DecoderLayer<T>>& decoders() { return decoders_; }
  const encoder::Encoder<T>& encoder() const { return encoder_; }
  /// N = 1 with the raw first pair: the model has no encoder at all.
  bool encoder_free() const { return encoder_.layers() == 0; }

 private:
  ModelConfig config_;
  encoder::Encoder<T> encoder_;
  std::vector<DecoderLayer<T>> decoders_;
};

struct Correspondence {
  std::size_t layer = 0;
  int direction = 0;  // 0: query -> gallery, 1: gallery -> query
  std::size_t query_pos = 0, gallery_pos = 0;
  double local_score = 0.0;
};

struct PairScore {
  std::string query_id, gallery_id;
  double score = 0.0;
  std::vector<Correspondence> matches;
};

/// Matches of pair (qi, gi) whose local score exceeds threshold.
template <class T>
std::vector<Correspondence> extract_correspondences(
    const DecoderState<T>& state, std::size_t qi, std::size_t gi,
    double threshold = -std::numeric_limits<double>::infinity());

template <class T>
PairScore make_pair_score(const DecoderState<T>& state, std::size_t qi, std::size_t gi,
                          std::string query_id, std::string gallery_id, double threshold);

inline constexpr const char* kMatchesHeader =
    "query_id,gallery_id,layer,direction,query_row,query_col,gallery_row,gallery_col,local_score";

/// One row per match, positions as (i div w, i mod w).
void write_matches_csv(std::ostream& out, const std::vector<PairScore>& pairs, std::size_t w);

extern template class TransMatcher<float>;
extern template class TransMatcher<double>;

}  // namespace transmatcher::matcher
