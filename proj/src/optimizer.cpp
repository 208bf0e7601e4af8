#include "secnn/optimizer.hpp"

#include <cmath>

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"

namespace secnn {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  fail(ErrorCode::Config, "unknown optimizer '" + std::string(text) + "' (expected adam or sgd)");
}

void Sgd::step(SecnnModel& model, float lr) {
  const auto& k = kernels::active();
  for (Parameter* p : model.parameters()) k.axpy(-lr, p->grad.ptr(), p->value.ptr(), p->value.numel());
}

void Adam::step(SecnnModel& model, float lr) {
  for (Parameter* p : model.parameters()) {
    auto [it, inserted] = state_.try_emplace(p->id);
    Moments& m = it->second;
    if (inserted || m.first.shape() != p->value.shape()) {
      m.first = Tensor(p->value.shape(), 0.0f);
      m.second = Tensor(p->value.shape(), 0.0f);
      m.steps = 0;
    }
    ++m.steps;
    const float c1 = 1.0f - std::pow(beta1_, static_cast<float>(m.steps));
    const float c2 = 1.0f - std::pow(beta2_, static_cast<float>(m.steps));
    float* value = p->value.ptr();
    const float* grad = p->grad.ptr();
    float* m1 = m.first.ptr();
    float* m2 = m.second.ptr();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      m1[i] = beta1_ * m1[i] + (1.0f - beta1_) * grad[i];
      m2[i] = beta2_ * m2[i] + (1.0f - beta2_) * grad[i] * grad[i];
      value[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps_);
    }
  }
}

void Adam::on_mutation(const MutationReport& report) {
  for (const ParameterGrowth& growth : report.grown) {
    auto it = state_.find(growth.id);
    if (it == state_.end()) continue;
    Moments& m = it->second;
    if (m.first.dim(growth.axis) != growth.old_extent) {
      state_.erase(it);
      continue;
    }
    m.first = grow_axis(m.first, growth.axis, growth.new_extent, [] { return 0.0f; });
    m.second = grow_axis(m.second, growth.axis, growth.new_extent, [] { return 0.0f; });
  }
  for (std::uint64_t id : report.created) state_.erase(id);
}

const Adam::Moments* Adam::moments(std::uint64_t id) const {
  auto it = state_.find(id);
  return it == state_.end() ? nullptr : &it->second;
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind) {
  if (kind == OptimizerKind::Sgd) return std::make_unique<Sgd>();
  return std::make_unique<Adam>();
}

}  // namespace secnn
