#include "residseg/nn/tape.hpp"

#include "residseg/error.hpp"

namespace residseg::nn {

template <typename T>
Var Tape<T>::constant(Tensor4<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::leaf(Tensor4<T> value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, {}, nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  nodes_.push_back(Node{p.value, {}, grad_enabled_, {}, grad_enabled_ ? &p : nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(Tensor4<T> value, bool needs_grad, BackwardFn fn) {
  const bool track = grad_enabled_ && needs_grad;
  nodes_.push_back(Node{std::move(value), {}, track, track ? std::move(fn) : BackwardFn{}, nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor4<T>& Tape<T>::grad(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor4<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (!grad_enabled_) throw Error("backward called on a tape recorded without gradients");
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward root must be a scalar, got " + to_string(nodes_[root.id].value.shape()));
  }
  grad(root)[0] = T{1};
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, i);
    if (node.bound != nullptr) {
      auto& dst = node.bound->grad;
      const auto& src = nodes_[i].grad;
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace residseg::nn
