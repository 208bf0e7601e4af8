#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "secnn/tensor.hpp"

namespace secnn {

enum class Mode { Train, Eval };

// A learnable tensor. `id` is unique within a model and stable for the
// parameter's lifetime; widening keeps the id, insertion mints new ones.
struct Parameter {
  std::uint64_t id = 0;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::uint64_t param_id, Tensor initial);

  void zero_grad() { grad.fill(0.0f); }
};

struct Var {
  std::size_t index = 0;
};

// Tape of executed operations. Ops evaluate eagerly and record a closure that
// maps the output gradient to input gradients. Single use: backward() consumes it.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  // With track_gradients = false nothing requires grad and no closures are kept.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Repeated calls with the same parameter return the same node.
  Var param(Parameter& parameter);
  // Read-only access for gradient-free graphs; throws when tracking is on.
  Var param(const Parameter& parameter);

  const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.index).requires_grad; }

  // Gradient of a `variable` leaf after backward(); zeros if it received none.
  Tensor grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates in reverse execution order.
  // Parameter gradients are accumulated into Parameter::grad.
  void backward(Var loss);
  bool consumed() const noexcept { return consumed_; }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op authoring interface.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
  }
  // Lazily zero-initialized gradient accumulator for an input during backward.
  Tensor& grad_accumulator(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* parameter = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool track_ = true;
  bool consumed_ = false;
};

}  // namespace secnn
