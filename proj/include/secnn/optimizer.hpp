#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <unordered_map>

#include "secnn/model.hpp"

namespace secnn {

enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view text);

class Optimizer {
 public:
  virtual ~Optimizer() = default;

  // Applies one update from the gradients currently stored on the parameters.
  virtual void step(SecnnModel& model, float lr) = 0;

  // Keeps per-parameter state aligned after the model grew.
  virtual void on_mutation(const MutationReport& report) { (void)report; }

  virtual void reset() {}
};

class Sgd final : public Optimizer {
 public:
  void step(SecnnModel& model, float lr) override;
};

// Moments are keyed by parameter id. Parameters that appear after a mutation
// start with zero moments; grown tensors keep their old entries' moments.
class Adam final : public Optimizer {
 public:
  Adam(float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(SecnnModel& model, float lr) override;
  void on_mutation(const MutationReport& report) override;
  void reset() override { state_.clear(); }

  struct Moments {
    Tensor first;
    Tensor second;
    std::uint64_t steps = 0;
  };
  const Moments* moments(std::uint64_t id) const;

 private:
  float beta1_, beta2_, eps_;
  std::unordered_map<std::uint64_t, Moments> state_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind);

}  // namespace secnn
