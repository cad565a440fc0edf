#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "transmatcher/numcore/parameter.hpp"
#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::nc {

struct GradCheckOptions {
  double rel_tol = 1e-4;
  double step = 1e-5;
  /// Denominator floor of the relative error, |a - n| / max(|a|, |n|, floor);
  /// keeps entries whose true gradient is ~0 from reporting pure noise.
  double abs_floor = 1e-6;
};

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double autodiff = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  /// Entries whose +/- step evaluations crossed a kink (argmax switch or ReLU
  /// sign flip); excluded from pass/fail.
  std::size_t kinks = 0;
  bool passed = false;
  GradCheckEntry worst;
  std::vector<std::string> warnings;
};

/// Compares autodiff gradients of the scalar f against central finite
/// differences for every entry of every parameter. f is re-run for each
/// perturbation, so it must be a deterministic function of the parameters.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f,
                           const ParameterSet<double>& params, const GradCheckOptions& opts = {});

}  // namespace transmatcher::nc
