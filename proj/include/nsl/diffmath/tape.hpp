#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "nsl/diffmath/tensor.hpp"

namespace nsl::ad {

class Tape;

// Handle to a tensor recorded on a Tape. Cheap to copy; valid as long as the
// tape is alive and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zeros if none reached this node.
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Linear record of operations in creation order, which is a topological
// order by construction. One tape per training step and thread. References
// returned by value()/grad() stay valid until the tape is cleared.
class Tape {
 public:
  // Receives the gradient of the loss w.r.t. the node's output and pushes
  // contributions to its inputs through accumulate().
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf that honours value.requires_grad().
  Var leaf(Tensor value);

  // Records an op output. The backward rule is kept only when some input
  // requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  // Reverse sweep from a scalar loss. Throws ContractError for a non-scalar
  // loss or one that lives on a different tape.
  void backward(Var loss);
  void zero_grad();

  // Adds g into the gradient of v when v requires one.
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& grad(Var v);
  bool has_grad(Var v) const { return nodes_[v.id()].has_grad; }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Shape& Var::shape() const { return tape_->value(*this).shape(); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }
inline const Tensor& Var::grad() const { return tape_->grad(*this); }

}  // namespace nsl::ad
