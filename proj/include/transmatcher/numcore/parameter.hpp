#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "transmatcher/numcore/random.hpp"
#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::nc {

/// Learning-rate group names used by the trainer.
inline constexpr const char* kBackboneGroup = "backbone";
inline constexpr const char* kNewGroup = "new";

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  std::string group;
};

/// Non-trainable state that still belongs in a checkpoint (batch-norm running
/// statistics).
template <class T>
struct Buffer {
  std::string name;
  Tensor<T> tensor;
};

/// Registry of every trainable tensor of a model. Tensors are handles, so the
/// module that owns a parameter and the registry see the same storage.
template <class T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Tensor<T> tensor, std::string group);
  /// U(-bound, bound) initialization.
  Tensor<T> add_uniform(std::string name, Shape shape, double bound, Rng& rng, std::string group);
  /// Fan-in scaled uniform, bound = 1/sqrt(fan_in).
  Tensor<T> add_fan_in(std::string name, Shape shape, std::size_t fan_in, Rng& rng,
                       std::string group);
  Tensor<T> add_constant(std::string name, Shape shape, T value, std::string group);
  void add_buffer(std::string name, Tensor<T> tensor);

  const std::vector<Parameter<T>>& params() const { return params_; }
  const std::vector<Buffer<T>>& buffers() const { return buffers_; }
  const Parameter<T>* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  void check_unique(const std::string& name) const;

  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace transmatcher::nc
