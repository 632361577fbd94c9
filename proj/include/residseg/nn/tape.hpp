#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "residseg/nn/parameter.hpp"
#include "residseg/nn/tensor.hpp"

namespace residseg::nn {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode recording of one forward pass.
///
/// Every op appends a node holding its output value and, when any input
/// requires a gradient, a closure that pushes the node's gradient back to
/// its inputs. Nodes are appended in topological order so `backward` walks
/// them in reverse. A tape built with `grad_enabled = false` records values
/// only; parameters then enter as constants.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor4<T> value);
  /// Differentiable leaf; its gradient is readable after `backward`.
  Var leaf(Tensor4<T> value);
  /// Differentiable leaf bound to `p`; `backward` adds into `p.grad`.
  Var parameter(Parameter<T>& p);

  /// Appends an op result. `fn` is dropped unless some input needs a gradient.
  Var record(Tensor4<T> value, bool needs_grad, BackwardFn fn);

  const Tensor4<T>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }
  /// Gradient of a node; allocated as zeros on first access.
  Tensor4<T>& grad(Var v);
  Tensor4<T>& grad(std::size_t id) { return grad(Var{id}); }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* bound = nullptr;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace residseg::nn
