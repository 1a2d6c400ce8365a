#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "stict/tensor.hpp"

namespace stict {

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Ordered record of executed operations. backward() replays it in reverse and
/// accumulates exactly one gradient per marked Parameter.
///
/// With gradients disabled the tape only stores values: no closures are kept
/// and parameters enter as constants, so nothing can flow back to them.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient; must call accumulate() for inputs.
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool grad_enabled = true, bool track_branches = false)
      : grad_enabled_(grad_enabled), track_branches_(track_branches) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(Parameter<T>& p);

  /// Records an op result. `backward` is kept only if some input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward);

  const Tensor<T>& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  /// Adds `g` into the gradient slot of node `id` (no-op for constants).
  void accumulate(int id, const Tensor<T>& g);
  void accumulate(int id, Tensor<T>&& g);

  /// Reverse sweep from a scalar node; parameter gradients are added to Parameter::grad.
  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Non-smooth ops (ReLU, clamped log) fold each branch decision into a running hash
  /// when tracking is on. Two evaluations with equal signatures took the same branches.
  bool tracks_branches() const noexcept { return track_branches_; }
  void note_branch(bool taken) noexcept {
    signature_ = (signature_ ^ (taken ? 0x9e3779b97f4a7c15ull : 0x2545f4914f6cdd1dull)) * 0x100000001b3ull;
  }
  std::uint64_t branch_signature() const noexcept { return signature_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  bool grad_enabled_;
  bool track_branches_;
  std::uint64_t signature_ = 0xcbf29ce484222325ull;
  std::deque<Node> nodes_;  // stable element addresses: value() references survive growth
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

/// Throws ShapeError naming `what` if the two vars live on different tapes.
template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* what);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace stict
