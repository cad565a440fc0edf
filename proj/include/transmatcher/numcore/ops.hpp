#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transmatcher/numcore/tensor.hpp"

// Differentiable primitives. Every primitive validates shapes, throws
// NonFiniteError if it would produce NaN/Inf, and records a backward closure
// on the active tape when any input requires a gradient.
//
// Binary element-wise operands must have identical shapes, or one of them
// must hold a single element. No other broadcasting exists.

namespace transmatcher::nc {

// Linear algebra ----------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]; reductions run sequentially over k.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched [B,m,k] x [B,k,n] -> [B,m,n].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <class T>
Tensor<T> transpose(const Tensor<T>& x);

// Element-wise ------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& x, T c);
template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// x[..., C] + bias[C], repeated over all leading positions.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// x[n,k] * w[k,m] + b[m]; bias may be undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Reductions ---------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <class T>
struct MaxResult {
  Tensor<T> values;
  IndexTensor indices;
};

/// Max over one axis with lowest-index tie breaking. The gradient reaches only
/// the selected position.
template <class T>
MaxResult<T> max_reduce_argmax(const Tensor<T>& x, std::size_t axis);

/// Sum of all entries -> shape {1}.
template <class T>
Tensor<T> sum(const Tensor<T>& x);

/// Reduces one axis away; rank drops by one (rank-1 inputs yield shape {1}).
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis);
template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

// Shape manipulation -------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

/// Entries [begin, end) along axis.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Selects sub-tensors along axis 0, repeats allowed.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::span<const std::size_t> indices);

/// Stacks n copies along a new leading axis: [...] -> [n, ...].
template <class T>
Tensor<T> repeat(const Tensor<T>& x, std::size_t n);

// Normalization ------------------------------------------------------------

inline constexpr double kNormEps = 1e-5;

/// Normalizes each slice along the last axis to mean 0 / variance 1 (biased
/// variance), then applies gamma/beta over the last axis when they are defined.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kNormEps);

/// Running statistics of a batch-norm layer. Stored as tensors so a parameter
/// registry can alias them for checkpointing.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = kNormEps;

  explicit BatchNormState(std::size_t channels = 0);
};

/// x[B,C]. Training mode uses batch statistics and updates the running ones
/// (unbiased variance, as torch does); eval mode uses running statistics only.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, const Tensor<T>& gamma,
                     const Tensor<T>& beta, bool training);

/// Row-wise L2 normalization of x[n,d].
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, double eps = 1e-12);

// Losses -------------------------------------------------------------------

/// Element-wise softplus(z) - y*z; labels must be 0 or 1.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const int> labels);

/// Scalar convenience form.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logit, int label);

}  // namespace transmatcher::nc
