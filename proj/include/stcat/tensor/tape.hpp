#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "stcat/tensor/tensor.hpp"

namespace stcat {

#ifdef NDEBUG
inline constexpr bool kCheckFiniteDefault = false;
#else
inline constexpr bool kCheckFiniteDefault = true;
#endif

template <typename S>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<S>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<S>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of operations. Single-threaded; one per forward pass.
template <typename S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor<S> value;
    std::vector<S> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "leaf";
  };

  explicit Tape(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Tensor<S> value) { return push("constant", std::move(value), false, {}); }
  Var<S> variable(Tensor<S> value) { return push("leaf", std::move(value), true, {}); }

  /// Records an op output. The node requires grad iff any input does; the
  /// backward closure is dropped otherwise.
  Var<S> record(const char* op, Tensor<S> value, std::initializer_list<Var<S>> inputs,
                BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var<S>>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var<S> record(const char* op, Tensor<S> value, std::span<const Var<S>> inputs,
                BackwardFn backward) {
    bool rg = false;
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw std::logic_error(std::string(op) + ": operand from another tape");
      rg = rg || requires_grad(in.id());
    }
    if (check_finite_) {
      for (S v : value.data) {
        if (!std::isfinite(v)) {
          throw NumericError(std::string("non-finite output in op '") + op + "' shape " +
                             to_string(value.shape));
        }
      }
    }
    return push(op, std::move(value), rg, rg ? std::move(backward) : BackwardFn{});
  }

  const Tensor<S>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

  /// Gradient accumulator of a node, zero-allocated on first touch.
  /// Returns nullptr for nodes that do not require grad.
  S* grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
    return n.grad.data();
  }

  const std::vector<S>& output_grad(std::size_t id) const { return nodes_[id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var<S> loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!requires_grad(loss.id())) return;
    grad_buffer(loss.id())[0] += S(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient w.r.t. a node; zeros when unreachable from the loss.
  Tensor<S> grad(Var<S> v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor<S>::zeros(n.value.shape);
    return Tensor<S>(n.value.shape, n.grad);
  }

 private:
  Var<S> push(const char* op, Tensor<S> value, bool rg, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = rg;
    n.backward = std::move(fn);
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var<S>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool check_finite_;
};

}  // namespace stcat
