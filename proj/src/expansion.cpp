#include "secnn/expansion.hpp"

#include <algorithm>
#include <cmath>

#include "secnn/errors.hpp"
#include "secnn/kernels.hpp"
#include "secnn/ops.hpp"

namespace secnn {

void ExpansionConfig::validate() const {
  if (!(tau > 1.0f)) fail(ErrorCode::Config, "tau must be > 1");
  if (!(lambda_n >= 0.0f)) fail(ErrorCode::Config, "lambda_n must be >= 0");
  if (channel_increment == 0) fail(ErrorCode::Config, "channel_increment must be >= 1");
  if (!(fisher_damping > 0.0f)) fail(ErrorCode::Config, "fisher_damping must be > 0");
  if (!(noise_coeff >= 0.0f)) fail(ErrorCode::Config, "noise_coeff must be >= 0");
  if (score_batch_size == 0) fail(ErrorCode::Config, "score_batch_size must be positive");
}

std::string_view to_string(ExpansionKind kind) {
  switch (kind) {
    case ExpansionKind::NoExpansion: return "none";
    case ExpansionKind::AddLayer: return "add_layer";
    case ExpansionKind::WidenChannels: return "widen_channels";
  }
  return "none";
}

ExpansionKind expansion_kind_from_string(std::string_view text) {
  if (text == "add_layer") return ExpansionKind::AddLayer;
  if (text == "widen_channels") return ExpansionKind::WidenChannels;
  if (text == "none") return ExpansionKind::NoExpansion;
  fail(ErrorCode::CorruptData, "unknown expansion kind '" + std::string(text) + "'");
}

std::vector<float> flatten_gradients(const SecnnModel& model) {
  std::vector<float> flat;
  flat.reserve(model.param_count());
  for (const Parameter* p : model.parameters()) flat.insert(flat.end(), p->grad.data().begin(), p->grad.data().end());
  return flat;
}

namespace {

void require_batch(const LabelledBatch& batch) {
  if (batch.images.empty() || batch.images.dim(0) == 0) fail(ErrorCode::InvalidArgument, "empty scoring batch");
  if (batch.labels.size() != batch.images.dim(0))
    fail(ErrorCode::InvalidShape, "scoring batch has " + std::to_string(batch.labels.size()) + " labels for " +
                                      std::to_string(batch.images.dim(0)) + " images");
}

}  // namespace

std::vector<float> mean_gradient(SecnnModel& model, const LabelledBatch& batch, float l1_coeff, std::size_t chunk) {
  require_batch(batch);
  const std::size_t total = batch.images.dim(0);
  chunk = std::max<std::size_t>(chunk, 1);
  Rng unused(0);
  model.zero_grad();
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    Graph g;
    Var logits = model.forward(g, slice_rows(batch.images, begin, end), Mode::Eval, unused);
    Var loss = ops::cross_entropy(g, logits, batch.labels.subspan(begin, end - begin));
    loss = ops::scale(g, loss, static_cast<float>(end - begin) / static_cast<float>(total));
    g.backward(loss);
  }
  if (l1_coeff > 0.0f) {
    Graph g;
    std::vector<Var> vars;
    for (Parameter* p : model.parameters()) vars.push_back(g.param(*p));
    g.backward(ops::l1_penalty(g, vars, l1_coeff));
  }
  return flatten_gradients(model);
}

FisherDiagonal empirical_fisher_diag(SecnnModel& model, const LabelledBatch& batch, std::size_t microbatch) {
  require_batch(batch);
  const std::size_t total = batch.images.dim(0);
  microbatch = std::max<std::size_t>(microbatch, 1);
  const auto& k = kernels::active();
  FisherDiagonal fisher;
  fisher.entries.assign(model.param_count(), 0.0f);
  fisher.sample_count = total;
  Rng unused(0);
  const auto params = model.parameters();
  for (std::size_t begin = 0; begin < total; begin += microbatch) {
    const std::size_t end = std::min(total, begin + microbatch);
    const Tensor group = slice_rows(batch.images, begin, end);
    for (std::size_t n = begin; n < end; ++n) {
      model.zero_grad();
      Graph g;
      Var logits = model.forward(g, slice_rows(group, n - begin, n - begin + 1), Mode::Eval, unused);
      g.backward(ops::cross_entropy(g, logits, batch.labels.subspan(n, 1)));
      float* dst = fisher.entries.data();
      for (const Parameter* p : params) {
        k.accumulate_square(p->grad.ptr(), dst, p->grad.numel());
        dst += p->grad.numel();
      }
    }
  }
  const float inv = 1.0f / static_cast<float>(total);
  for (auto& e : fisher.entries) e *= inv;
  model.zero_grad();
  return fisher;
}

double natural_expansion_score(std::span<const float> gradient, const FisherDiagonal& fisher, float damping) {
  if (gradient.size() != fisher.entries.size())
    fail(ErrorCode::InvalidShape, "gradient length " + std::to_string(gradient.size()) +
                                      " does not match Fisher length " + std::to_string(fisher.entries.size()));
  return kernels::active().natural_score(gradient.data(), fisher.entries.data(), gradient.size(), damping);
}

double regularized_score(double eta, std::int64_t delta_p, double lambda_n) {
  const double dp = static_cast<double>(delta_p);
  return eta * std::exp(-lambda_n * dp * dp);
}

ExpansionKind decide_expansion(double eta_current, double eta_layer, double eta_widen, double tau) {
  // eta_current == 0 counts as an unbounded ratio for any positive candidate.
  auto clears = [&](double eta) {
    if (eta_current > 0.0) return eta / eta_current > tau;
    return eta > 0.0;
  };
  if (eta_layer > eta_widen && clears(eta_layer)) return ExpansionKind::AddLayer;
  if (eta_widen > eta_layer && clears(eta_widen)) return ExpansionKind::WidenChannels;
  return ExpansionKind::NoExpansion;
}

std::uint64_t candidate_seed(std::uint64_t seed, ExpansionKind kind, std::size_t block) {
  return derive_seed(seed, static_cast<std::uint64_t>(kind), block);
}

namespace {

double score_model(SecnnModel& model, const LabelledBatch& batch, const ExpansionConfig& config, float l1_coeff) {
  const std::vector<float> g = mean_gradient(model, batch, l1_coeff);
  const FisherDiagonal fisher = empirical_fisher_diag(model, batch);
  return natural_expansion_score(g, fisher, config.fisher_damping);
}

std::optional<MutationReport> mutate(SecnnModel& model, ExpansionKind kind, std::size_t block,
                                     const ExpansionConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  if (kind == ExpansionKind::AddLayer) {
    if (model.blocks()[block].units.size() >= model.blocks()[block].capacity) return std::nullopt;
    return model.insert_identity_unit(block, config.noise_coeff, rng);
  }
  const std::size_t ceiling = model.channel_ceiling();
  if (ceiling != 0 && model.blocks()[block].out_channels + config.channel_increment > ceiling) return std::nullopt;
  return model.widen_block(block, config.channel_increment, config.noise_coeff, rng);
}

}  // namespace

ExpansionProposal propose_expansion(const SecnnModel& model, const LabelledBatch& batch,
                                    const ExpansionConfig& config, float l1_coeff, std::uint64_t seed) {
  config.validate();
  ExpansionProposal proposal;
  {
    SecnnModel current = model.clone();
    proposal.eta_current = score_model(current, batch, config, l1_coeff);
  }
  for (ExpansionKind kind : {ExpansionKind::AddLayer, ExpansionKind::WidenChannels}) {
    double& best = kind == ExpansionKind::AddLayer ? proposal.eta_layer_best : proposal.eta_widen_best;
    auto& best_block = kind == ExpansionKind::AddLayer ? proposal.layer_best_block : proposal.widen_best_block;
    for (std::size_t b = 0; b < model.blocks().size(); ++b) {
      SecnnModel candidate = model.clone();
      const auto report = mutate(candidate, kind, b, config, candidate_seed(seed, kind, b));
      if (!report) continue;
      CandidateScore score;
      score.kind = kind;
      score.block = b;
      score.delta_p = report->delta_p;
      score.eta = score_model(candidate, batch, config, l1_coeff);
      score.regularized = regularized_score(score.eta, score.delta_p, config.lambda_n);
      proposal.candidates.push_back(score);
      if (score.regularized > best) {
        best = score.regularized;
        best_block = b;
      }
    }
  }

  proposal.kind = decide_expansion(proposal.eta_current, proposal.eta_layer_best, proposal.eta_widen_best, config.tau);
  if (proposal.kind != ExpansionKind::NoExpansion) {
    const std::size_t b =
        proposal.kind == ExpansionKind::AddLayer ? *proposal.layer_best_block : *proposal.widen_best_block;
    proposal.block = b;
    proposal.mutation_seed = candidate_seed(seed, proposal.kind, b);
    for (const auto& c : proposal.candidates)
      if (c.kind == proposal.kind && c.block == b) proposal.delta_p = c.delta_p;
  }
  return proposal;
}

std::optional<MutationReport> apply_proposal(SecnnModel& model, const ExpansionProposal& proposal,
                                             const ExpansionConfig& config) {
  if (proposal.kind == ExpansionKind::NoExpansion || !proposal.block) return std::nullopt;
  auto report = mutate(model, proposal.kind, *proposal.block, config, proposal.mutation_seed);
  if (!report) fail(ErrorCode::CapacityExceeded, "proposal no longer applies to this model");
  return report;
}

}  // namespace secnn
