#pragma once

// Independent straight-loop re-implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "transmatcher/encoder/encoder.hpp"
#include "transmatcher/matcher/matcher.hpp"
#include "transmatcher/numcore/random.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using T64 = transmatcher::nc::Tensor<double>;

inline Mat rows_of(const T64& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  Mat m(rows, std::vector<double>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = t[offset + i * cols + j];
  return m;
}

inline double bn_eval(double x, const transmatcher::nc::BatchNormState<double>& st,
                      const T64& g, const T64& b, std::size_t c) {
  return (x - st.running_mean[c]) / std::sqrt(st.running_var[c] + st.eps) * g[c] + b[c];
}

struct DecodeResult {
  Mat s, s_prime;
  std::vector<double> fwd, rev;
  std::vector<std::size_t> fwd_arg, rev_arg;
  double score = 0.0;
};

/// Eval-mode decoder layer for one (hw x d) pair with explicit loops.
inline DecodeResult decode(const Mat& q, const Mat& k,
                           const transmatcher::matcher::DecoderLayer<double>& L,
                           const transmatcher::matcher::DecoderFlags& f) {
  const std::size_t hw = q.size(), d = q[0].size();
  auto project = [&](const Mat& x) {
    if (!f.fc1) return x;
    Mat y(hw, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t o = 0; o < d; ++o)
        for (std::size_t c = 0; c < d; ++c) y[i][o] += x[i][c] * L.W[c * d + o];
    return y;
  };
  const Mat qp = project(q), kp = project(k);
  DecodeResult r;
  r.s.assign(hw, std::vector<double>(hw, 0.0));
  r.s_prime = r.s;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      for (std::size_t c = 0; c < d; ++c) r.s[i][j] += qp[i][c] * kp[j][c];
      double wgt = 1.0;
      if (f.prior_embed) {
        const double reff = 0.5 * (L.R[i * hw + j] + L.R[j * hw + i]);
        wgt = 1.0 / (1.0 + std::exp(-reff));
      }
      r.s_prime[i][j] = r.s[i][j] * wgt;
    }
  }
  r.fwd.assign(hw, 0.0);
  r.rev.assign(hw, 0.0);
  r.fwd_arg.assign(hw, 0);
  r.rev_arg.assign(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    r.fwd[i] = r.s_prime[i][0];
    for (std::size_t j = 1; j < hw; ++j)
      if (r.s_prime[i][j] > r.fwd[i]) r.fwd[i] = r.s_prime[i][j], r.fwd_arg[i] = j;
  }
  for (std::size_t j = 0; j < hw; ++j) {
    r.rev[j] = r.s_prime[0][j];
    for (std::size_t i = 1; i < hw; ++i)
      if (r.s_prime[i][j] > r.rev[j]) r.rev[j] = r.s_prime[i][j], r.rev_arg[j] = i;
  }
  auto head = [&](std::vector<double> v) {
    if (f.bn1)
      for (std::size_t c = 0; c < hw; ++c) v[c] = bn_eval(v[c], L.bn1, L.bn1_weight, L.bn1_bias, c);
    if (f.mlphead1) {
      const std::size_t D = L.fc2_bias.numel();
      std::vector<double> h(D);
      for (std::size_t o = 0; o < D; ++o) {
        double a = L.fc2_bias[o];
        for (std::size_t c = 0; c < hw; ++c) a += v[c] * L.fc2_weight[c * D + o];
        h[o] = std::max(0.0, bn_eval(a, L.bn2, L.bn2_weight, L.bn2_bias, o));
      }
      v = h;
    }
    double y = L.fc3_bias[0];
    for (std::size_t c = 0; c < v.size(); ++c) y += v[c] * L.fc3_weight[c];
    return y;
  };
  const double yf = head(r.fwd), yr = head(r.rev);
  if (f.fuse_after_bn3) {
    r.score = bn_eval(yf, L.bn3, L.bn3_weight, L.bn3_bias, 0) +
              bn_eval(yr, L.bn3, L.bn3_weight, L.bn3_bias, 0);
  } else {
    r.score = bn_eval(yf + yr, L.bn3, L.bn3_weight, L.bn3_bias, 0);
  }
  return r;
}

/// Fills every parameter, buffer and prior of a decoder layer with random
/// values so that no stage is an identity.
inline void randomize_layer(transmatcher::matcher::DecoderLayer<double>& L,
                            transmatcher::nc::Rng& rng) {
  auto fill = [&](T64& t, double lo, double hi) {
    if (!t.defined()) return;
    for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  };
  fill(L.R, -2, 2);
  for (auto* st : {&L.bn1, &L.bn2, &L.bn3}) {
    fill(st->running_mean, -0.5, 0.5);
    fill(st->running_var, 0.5, 2.0);
  }
  fill(L.bn1_weight, 0.5, 1.5);
  fill(L.bn1_bias, -0.5, 0.5);
  fill(L.bn2_weight, 0.5, 1.5);
  fill(L.bn2_bias, -0.5, 0.5);
  fill(L.bn3_weight, 0.5, 1.5);
  fill(L.bn3_bias, -0.5, 0.5);
}

/// Average precision of a ranked relevance list (1 = relevant).
inline double average_precision(const std::vector<int>& ranked) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k]) {
      hits += 1.0;
      sum += hits / static_cast<double>(k + 1);
    }
  }
  return hits > 0 ? sum / hits : 0.0;
}

inline Mat mat(const T64& t) { return rows_of(t, 0, t.dim(0), t.dim(1)); }

inline Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat add_row(Mat a, const T64& row) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  return a;
}

inline Mat layer_norm(Mat x, const T64& g, const T64& b) {
  for (auto& r : x) {
    double mean = 0.0, var = 0.0;
    for (double v : r) mean += v / r.size();
    for (double v : r) var += (v - mean) * (v - mean) / r.size();
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = (r[j] - mean) / std::sqrt(var + 1e-5);
      if (g.defined()) r[j] = r[j] * g[j] + b[j];
    }
  }
  return x;
}

inline Mat attention(const Mat& q, const Mat& k, const Mat& v) {
  const double s = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> e(k.size());
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < q[0].size(); ++c) dot += q[i][c] * k[j][c];
      e[j] = dot * s;
      mx = std::max(mx, e[j]);
    }
    for (auto& x : e) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += e[j] / z * v[j][c];
  }
  return out;
}

inline Mat mha(const Mat& q, const Mat& kv, const transmatcher::encoder::AttentionParams<double>& p) {
  Mat cat(q.size());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    auto head = attention(mm(q, mat(p.wq[h])), mm(kv, mat(p.wk[h])), mm(kv, mat(p.wv[h])));
    for (std::size_t i = 0; i < q.size(); ++i) cat[i].insert(cat[i].end(), head[i].begin(), head[i].end());
  }
  return mm(cat, mat(p.wo));
}

inline Mat feed_forward(const Mat& x, const T64& w1, const T64& b1, const T64& w2, const T64& b2) {
  auto h = add_row(mm(x, mat(w1)), b1);
  for (auto& r : h)
    for (auto& v : r) v = std::max(0.0, v);
  return add_row(mm(h, mat(w2)), b2);
}

inline Mat encoder_layer(const Mat& x, const transmatcher::encoder::EncoderLayerParams<double>& L) {
  auto y = layer_norm(add(x, mha(x, x, L.attn)), L.norm1_weight, L.norm1_bias);
  auto f = feed_forward(y, L.ff1_weight, L.ff1_bias, L.ff2_weight, L.ff2_bias);
  return layer_norm(add(y, f), L.norm2_weight, L.norm2_bias);
}

inline Mat encode(Mat x, const transmatcher::encoder::Encoder<double>& enc) {
  if (enc.layers() == 0) return x;
  if (enc.pos_embed().defined()) x = add(x, mat(enc.pos_embed()));
  for (std::size_t l = 0; l < enc.layers(); ++l) x = encoder_layer(x, enc.layer(l));
  if (enc.final_norm_weight().defined())
    x = layer_norm(x, enc.final_norm_weight(), enc.final_norm_bias());
  return x;
}

inline std::vector<double> mean_rows(const Mat& x) {
  std::vector<double> m(x[0].size(), 0.0);
  for (const auto& r : x)
    for (std::size_t j = 0; j < r.size(); ++j) m[j] += r[j];
  for (auto& v : m) v /= static_cast<double>(x.size());
  return m;
}

inline double fc_logit(const std::vector<double>& v, const T64& w, const T64& b) {
  double y = b[0];
  for (std::size_t j = 0; j < v.size(); ++j) y += v[j] * w[j];
  return y;
}

}  // namespace oracle
