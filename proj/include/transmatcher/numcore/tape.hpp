#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "transmatcher/numcore/tensor.hpp"

namespace transmatcher::nc {

/// Ordered record of executed primitives. Primitives record onto the tape
/// that is active on the calling thread (see TapeScope); with no active tape
/// nothing is recorded and forward passes run without autodiff bookkeeping.
///
/// Besides the backward closures, the tape folds every discrete decision made
/// by a non-smooth primitive (argmax positions, ReLU masks) into a running
/// signature. Two evaluations with equal signatures took the same branch at
/// every kink.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  /// A tape built with keep_closures = false only tracks the branch signature;
  /// it cannot run backward.
  explicit Tape(bool keep_closures) : keep_closures_(keep_closures) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* op, std::shared_ptr<detail::Node<T>> output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and replays the record in reverse. The tape is
  /// spent afterwards; a second call throws UsageError.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  bool spent() const { return spent_; }
  std::vector<std::string> op_names() const;

  void note_branch(std::uint64_t value);
  std::uint64_t branch_signature() const { return signature_; }

 private:
  struct Entry {
    const char* op;
    std::shared_ptr<detail::Node<T>> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool spent_ = false;
  bool keep_closures_ = true;
  std::uint64_t signature_ = 0x9e3779b97f4a7c15ULL;
};

template <class T>
Tape<T>*& active_tape_slot();

template <class T>
Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

/// Activates a tape on the current thread for the lifetime of the scope.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape_slot<T>()) {
    active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { active_tape_slot<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on the current thread (evaluation, optimizer updates).
template <class T>
class NoTapeScope {
 public:
  NoTapeScope() : previous_(active_tape_slot<T>()) { active_tape_slot<T>() = nullptr; }
  ~NoTapeScope() { active_tape_slot<T>() = previous_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace transmatcher::nc
