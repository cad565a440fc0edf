#pragma once

// Helpers for defining differentiable primitives outside ops.cpp.

#include <cmath>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "transmatcher/numcore/tape.hpp"
#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::nc::primitive {

template <class T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

/// The active tape if any input requires a gradient, else nullptr.
template <class T>
Tape<T>* recording(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = active_tape<T>();
  if (!tape) return nullptr;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

/// Wraps forward output, rejecting NaN/Inf.
template <class T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data) {
  for (const T v : data) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <class T>
void attach(Tape<T>* tape, const char* op, Tensor<T>& out, typename Tape<T>::BackwardFn fn) {
  out.node()->requires_grad = true;
  tape->record(op, out.node(), std::move(fn));
}

/// Accumulation target for an input's gradient, or nullptr if it takes none.
template <class T>
T* grad_target(const NodePtr<T>& n) {
  if (!n || !n->requires_grad) return nullptr;
  return n->grad_buffer().data();
}

}  // namespace transmatcher::nc::primitive
