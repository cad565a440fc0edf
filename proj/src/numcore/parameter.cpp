#include "transmatcher/numcore/parameter.hpp"

#include <cmath>
#include <stdexcept>

namespace transmatcher::nc {

template <class T>
void ParameterSet<T>::check_unique(const std::string& name) const {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  for (const auto& b : buffers_) {
    if (b.name == name) throw std::invalid_argument("duplicate buffer name '" + name + "'");
  }
}

template <class T>
Tensor<T> ParameterSet<T>::add(std::string name, Tensor<T> tensor, std::string group) {
  check_unique(name);
  tensor.node()->requires_grad = true;
  params_.push_back(Parameter<T>{std::move(name), tensor, std::move(group)});
  return tensor;
}

template <class T>
Tensor<T> ParameterSet<T>::add_uniform(std::string name, Shape shape, double bound, Rng& rng,
                                       std::string group) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return add(std::move(name), t, std::move(group));
}

template <class T>
Tensor<T> ParameterSet<T>::add_fan_in(std::string name, Shape shape, std::size_t fan_in, Rng& rng,
                                      std::string group) {
  return add_uniform(std::move(name), std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)),
                     rng, std::move(group));
}

template <class T>
Tensor<T> ParameterSet<T>::add_constant(std::string name, Shape shape, T value, std::string group) {
  return add(std::move(name), Tensor<T>::full(std::move(shape), value), std::move(group));
}

template <class T>
void ParameterSet<T>::add_buffer(std::string name, Tensor<T> tensor) {
  check_unique(name);
  buffers_.push_back(Buffer<T>{std::move(name), tensor});
}

template <class T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <class T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) {
    auto t = p.tensor;
    t.zero_grad();
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace transmatcher::nc
