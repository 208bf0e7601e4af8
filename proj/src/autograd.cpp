#include "secnn/autograd.hpp"

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"

namespace secnn {

Parameter::Parameter(std::uint64_t param_id, Tensor initial)
    : id(param_id), value(std::move(initial)), grad(value.shape(), 0.0f) {}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, track_, nullptr, {}});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Parameter& parameter) {
  if (auto it = param_nodes_.find(&parameter); it != param_nodes_.end()) return Var{it->second};
  nodes_.push_back(Node{parameter.value, {}, track_, &parameter, {}});
  param_nodes_.emplace(&parameter, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::param(const Parameter& parameter) {
  if (track_) fail(ErrorCode::InvalidArgument, "const parameter used in a gradient-tracking graph");
  return constant(parameter.value);
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_.at(v.index);
  if (!node.grad.empty()) return node.grad;
  return Tensor(node.value.shape(), 0.0f);
}

Var Graph::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (consumed_) fail(ErrorCode::GraphConsumed, "cannot record onto a consumed graph");
  bool needs = false;
  for (Var in : inputs) needs = needs || nodes_.at(in.index).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(fn) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_accumulator(Var v) {
  Node& node = nodes_.at(v.index);
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0f);
  return node.grad;
}

void Graph::backward(Var loss) {
  if (consumed_) fail(ErrorCode::GraphConsumed, "backward already ran on this graph");
  Node& root = nodes_.at(loss.index);
  if (root.value.numel() != 1) fail(ErrorCode::InvalidShape, "backward needs a scalar loss, got " + shape_str(root.value.shape()));
  consumed_ = true;
  if (!root.requires_grad) return;
  grad_accumulator(loss).fill(1.0f);

  const auto& k = kernels::active();
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) {
      Tensor g = std::move(node.grad);
      node.grad = Tensor();
      BackwardFn fn = std::move(node.backward);
      node.backward = nullptr;
      fn(*this, g);
    } else if (node.parameter != nullptr) {
      Tensor& dst = node.parameter->grad;
      k.axpy(1.0f, node.grad.ptr(), dst.ptr(), dst.numel());
    }
  }
}

}  // namespace secnn
