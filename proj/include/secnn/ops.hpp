#pragma once

#include <span>

#include "secnn/autograd.hpp"
#include "secnn/random.hpp"
#include "secnn/tensor.hpp"

// Differentiable operations. Each evaluates eagerly and records its
// vector-Jacobian product on the graph.
namespace secnn::ops {

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

// Cross-correlation with zero padding. input [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout].
Var conv2d(Graph& g, Var input, Var weight, Var bias, std::size_t stride, std::size_t padding);

// Train mode normalizes with biased batch statistics and folds the unbiased
// variance into the running stats; eval mode uses the running stats.
Var batchnorm2d(Graph& g, Var input, Var gamma, Var beta, BatchNormStats& stats, Mode mode,
                float momentum = kBatchNormMomentum, float eps = kBatchNormEps);

Var leaky_relu(Graph& g, Var input, float slope);

// Train mode zeroes each element with probability `rate` and rescales the
// survivors by 1/(1-rate). Eval mode and rate 0 return the input node.
Var dropout(Graph& g, Var input, float rate, Mode mode, Rng& rng);

// Gradient goes to the first maximal element of each window.
Var maxpool2d(Graph& g, Var input, std::size_t kernel, std::size_t stride);

// Non-overlapping average pooling; H and W must be divisible by `kernel`.
Var avgpool2d(Graph& g, Var input, std::size_t kernel);

Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, float factor);
Var sum(Graph& g, Var a);
Var flatten(Graph& g, Var input);

// input [N,D], weight [Dout,D], bias [Dout] -> [N,Dout]
Var linear(Graph& g, Var input, Var weight, Var bias);

// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Graph& g, Var logits, std::span<const int> labels);

// coefficient * sum |theta|, subgradient 0 at theta = 0.
Var l1_penalty(Graph& g, std::span<const Var> params, float coefficient);

}  // namespace secnn::ops
