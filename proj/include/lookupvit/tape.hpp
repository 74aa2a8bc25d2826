#pragma once

#include <cstddef>
#include <functional>
#include <deque>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lookupvit/tensor.hpp"

namespace lookupvit {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  friend bool operator==(const Var& a, const Var& b) { return a.tape == b.tape && a.id == b.id; }
};

/// Reverse-mode recorder. Nodes are appended in evaluation order; backward()
/// walks them in reverse, so every node's gradient is complete before its
/// backward function runs. One tape per forward/backward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that never receives gradient.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// A free input that does receive gradient (used by tests and gradient checks).
  Var<T> input(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  /// Binds a model parameter. Repeated calls with the same tensor return the same node,
  /// so gradients from every use accumulate in one place.
  /// The tape refers to `p` without copying it; p must stay alive and unmodified
  /// until the tape is discarded.
  Var<T> param(const Tensor<T>& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var<T>{this, it->second};
    nodes_.push_back(Node{Tensor<T>(), &p, Tensor<T>(), BackwardFn{}, true});
    const std::size_t id = nodes_.size() - 1;
    params_.emplace(&p, id);
    return Var<T>{this, id};
  }

  /// Records an op output. `backward` is dropped when no input requires gradient.
  template <typename... Inputs>
  Var<T> record(Tensor<T> value, BackwardFn backward, const Inputs&... inputs) {
    const bool needs = (... || requires_grad(inputs));
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).get(); }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer for v, allocated as zeros on first touch. Only meaningful for
  /// nodes that require gradient; callers check requires_grad before accumulating.
  Tensor<T>& grad_buffer(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(n.get().shape());
    return n.grad;
  }

  /// Gradient of the last backward() target w.r.t. v (zeros if v did not contribute).
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Tensor<T>(n.get().shape()) : n.grad;
  }

  /// Gradient w.r.t. a bound parameter; zeros if the parameter was never bound.
  Tensor<T> param_grad(const Tensor<T>& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return Tensor<T>(p.shape());
    return grad(Var<T>{const_cast<Tape*>(this), it->second});
  }

  bool has_param(const Tensor<T>& p) const { return params_.count(&p) != 0; }

  void backward(Var<T> loss) {
    const Node& root = nodes_.at(loss.id);
    if (root.get().numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          shape_str(root.get().shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;

    const Tensor<T>& get() const { return external ? *external : value; }
  };

  bool requires_grad(const std::vector<Var<T>>& vs) const {
    for (const auto& v : vs)
      if (requires_grad(v)) return true;
    return false;
  }

  Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), nullptr, Tensor<T>(), std::move(fn), needs_grad});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // deque: references to values stay valid as the tape grows
  std::unordered_map<const Tensor<T>*, std::size_t> params_;
};

}  // namespace lookupvit
