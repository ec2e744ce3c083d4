#include "nsl/diffmath/tape.hpp"

#include "nsl/diffmath/errors.hpp"

namespace nsl::ad {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  value.set_requires_grad(false);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  value.set_requires_grad(true);
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  return value.requires_grad() ? variable(std::move(value)) : constant(std::move(value));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool any = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("op input recorded on a different tape");
    any = any || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = any;
  if (any) n.backward = std::move(backward);
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  bool any = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError("op input recorded on a different tape");
    any = any || nodes_[v.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = any;
  if (any) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " for value " +
                         shape_str(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad.add_(g);
  }
}

void Tape::accumulate(Var v, Tensor&& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " for value " +
                         shape_str(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
  } else {
    n.grad.add_(g);
  }
}

const Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad && n.grad.shape() != n.value.shape()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss is not on this tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(root.value.shape()));
  }
  if (!root.requires_grad) return;
  accumulate(loss, Tensor(root.value.shape(), 1.0));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // Inputs always precede their output, so the rule never touches n.grad.
    n.backward(*this, n.grad);
  }
}

}  // namespace nsl::ad
