#include "transmatcher/numcore/tape.hpp"

namespace transmatcher::nc {

template <class T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template Tape<float>*& active_tape_slot<float>();
template Tape<double>*& active_tape_slot<double>();

template <class T>
void Tape<T>::record(const char* op, std::shared_ptr<detail::Node<T>> output, BackwardFn fn) {
  if (spent_) throw UsageError(std::string("recording '") + op + "' on a spent tape");
  if (!keep_closures_) return;
  entries_.push_back(Entry{op, std::move(output), std::move(fn)});
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (spent_) throw UsageError("backward called twice on the same tape");
  if (!keep_closures_) throw UsageError("backward on a signature-only tape");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  spent_ = true;
  auto& seed = loss.node()->grad_buffer();
  seed[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->grad.empty()) it->fn();
  }
  // Release closures (and the intermediates they hold) as soon as possible.
  entries_.clear();
}

template <class T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.emplace_back(e.op);
  return names;
}

template <class T>
void Tape<T>::note_branch(std::uint64_t value) {
  // splitmix64 finalizer over the running state
  std::uint64_t z = signature_ ^ (value + 0x9e3779b97f4a7c15ULL + (signature_ << 6));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  signature_ = z ^ (z >> 31);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace transmatcher::nc
