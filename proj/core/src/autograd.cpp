#include "stict/autograd.hpp"

namespace stict {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw NumericalError("non-finite value entered the tape as a constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (!p.value.all_finite()) throw NumericalError("parameter '" + p.name + "' holds non-finite values");
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = grad_enabled_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  if (!value.all_finite()) throw NumericalError("operation produced non-finite values");
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw ShapeError("operation mixes values from different tapes");
      if (nodes_[static_cast<std::size_t>(in.id)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::accumulate(int id, const Tensor<T>& g) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                     shape_string(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::accumulate(int id, Tensor<T>&& g) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (!n.requires_grad) return;
  if (!n.has_grad && g.shape() == n.value.shape()) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  accumulate(id, static_cast<const Tensor<T>&>(g));
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ShapeError("backward() called with a value from another tape");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " + shape_string(value(loss.id).shape()));
  }
  if (!grad_enabled_ || !requires_grad(loss.id)) return;
  accumulate(loss.id, Tensor<T>(value(loss.id).shape(), T{1}));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      if (n.param->grad.shape() != n.value.shape()) n.param->zero_grad();
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    } else if (n.backward) {
      // Move out so the closure's captures can be freed after use.
      Tensor<T> g = std::move(n.grad);
      n.has_grad = false;
      n.backward(*this, g);
    }
  }
}

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ShapeError(std::string(what) + ": operands live on different tapes");
  }
  return *a.tape;
}

template class Tape<float>;
template class Tape<double>;
template Tape<float>& same_tape(const Var<float>&, const Var<float>&, const char*);
template Tape<double>& same_tape(const Var<double>&, const Var<double>&, const char*);

}  // namespace stict
