#pragma once

#include <map>
#include <string>
#include <vector>

#include "transmatcher/numcore/parameter.hpp"

namespace transmatcher::nc {

/// L2 norm of all gradients concatenated. Parameters without a gradient
/// buffer count as zero.
template <class T>
double global_grad_norm(const ParameterSet<T>& params);

/// Rescales all gradients so the global norm is at most max_norm. Returns
/// the norm before clipping.
template <class T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm);

template <class T>
void zero_grad(ParameterSet<T>& params) {
  params.zero_grad();
}

/// Learning rate per parameter group.
using LrMap = std::map<std::string, double>;

/// Plain SGD with optional heavy-ball momentum (v <- m*v + g; p <- p - lr*v).
template <class T>
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  /// Throws if a parameter has no gradient or its group has no rate.
  void step(ParameterSet<T>& params, const LrMap& lrs);

 private:
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace transmatcher::nc
