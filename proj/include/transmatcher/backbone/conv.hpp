#pragma once

#include <cstddef>

#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::backbone {

/// Cross-correlation of x[B,C,H,W] with kernel[O,C,k,k] (k odd) and optional
/// bias[O]. Padding is k/2 on every side, so the output is [B,O,ceil(H/s),ceil(W/s)].
template <class T>
nc::Tensor<T> conv2d(const nc::Tensor<T>& x, const nc::Tensor<T>& kernel, const nc::Tensor<T>& bias,
                     std::size_t stride);

/// Per-sample, per-channel normalization over spatial positions (no affine).
template <class T>
nc::Tensor<T> instance_norm(const nc::Tensor<T>& x);

}  // namespace transmatcher::backbone
