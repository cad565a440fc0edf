#include "transmatcher/numcore/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace transmatcher::nc {

template <class T>
double global_grad_norm(const ParameterSet<T>& params) {
  double s = 0.0;
  for (const auto& p : params.params()) {
    for (const T g : p.tensor.grad()) s += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(s);
}

template <class T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (const auto& p : params.params()) {
      auto t = p.tensor;
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template <class T>
void Sgd<T>::step(ParameterSet<T>& params, const LrMap& lrs) {
  const auto& ps = params.params();
  if (velocity_.size() != ps.size()) velocity_.assign(ps.size(), {});
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto t = ps[k].tensor;
    if (!t.has_grad()) {
      throw std::runtime_error("sgd: parameter '" + ps[k].name + "' has no gradient");
    }
    const auto it = lrs.find(ps[k].group);
    if (it == lrs.end()) {
      throw std::runtime_error("sgd: no learning rate for group '" + ps[k].group + "' of '" +
                               ps[k].name + "'");
    }
    const T lr = static_cast<T>(it->second);
    auto data = t.mutable_data();
    auto grad = t.mutable_grad();
    if (momentum_ == 0.0) {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * grad[i];
      continue;
    }
    auto& v = velocity_[k];
    if (v.empty()) v.assign(data.size(), T(0));
    const T m = static_cast<T>(momentum_);
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = m * v[i] + grad[i];
      data[i] -= lr * v[i];
    }
  }
}

template double global_grad_norm(const ParameterSet<float>&);
template double global_grad_norm(const ParameterSet<double>&);
template double clip_grad_norm(ParameterSet<float>&, double);
template double clip_grad_norm(ParameterSet<double>&, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace transmatcher::nc
