#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "secnn/model.hpp"
#include "secnn/tensor.hpp"

namespace secnn {

struct ExpansionConfig {
  float tau = 2.0f;
  float lambda_n = 1e-8f;
  std::size_t channel_increment = 4;
  // Std of the Gaussian noise on new weights, for both mutation kinds.
  float noise_coeff = 1e-4f;
  float fisher_damping = 1e-8f;
  std::size_t score_batch_size = 512;
  std::size_t cooldown_epochs = 10;

  void validate() const;
  bool operator==(const ExpansionConfig&) const = default;
};

// Diagonal of the empirical Fisher, aligned with the model's walker order.
struct FisherDiagonal {
  std::vector<float> entries;
  std::size_t sample_count = 0;
};

enum class ExpansionKind { NoExpansion, AddLayer, WidenChannels };

std::string_view to_string(ExpansionKind kind);
ExpansionKind expansion_kind_from_string(std::string_view text);

struct CandidateScore {
  ExpansionKind kind = ExpansionKind::NoExpansion;
  std::size_t block = 0;
  std::int64_t delta_p = 0;
  double eta = 0.0;
  double regularized = 0.0;
};

inline constexpr double kNoCandidate = -std::numeric_limits<double>::infinity();

struct ExpansionProposal {
  ExpansionKind kind = ExpansionKind::NoExpansion;
  std::optional<std::size_t> block;
  double eta_current = 0.0;
  // Best regularized candidate score per kind; kNoCandidate when no block qualified.
  double eta_layer_best = kNoCandidate;
  double eta_widen_best = kNoCandidate;
  std::optional<std::size_t> layer_best_block;
  std::optional<std::size_t> widen_best_block;
  std::int64_t delta_p = 0;
  std::vector<CandidateScore> candidates;
  // Seed that reproduces the chosen mutation's noise.
  std::uint64_t mutation_seed = 0;
};

// Unweighted view of a labelled batch.
struct LabelledBatch {
  const Tensor& images;
  std::span<const int> labels;
};

// Flattened parameter gradients in walker order.
std::vector<float> flatten_gradients(const SecnnModel& model);

// Gradient of mean cross-entropy + L1 over the batch, eval mode (running
// batchnorm statistics, no dropout), in walker order.
std::vector<float> mean_gradient(SecnnModel& model, const LabelledBatch& batch, float l1_coeff,
                                 std::size_t chunk = 64);

// entry_i = (1/N) sum_n g_{n,i}^2 over per-sample gradients of the
// unregularized loss. `microbatch` only groups samples for scheduling.
FisherDiagonal empirical_fisher_diag(SecnnModel& model, const LabelledBatch& batch, std::size_t microbatch = 32);

// g^T F^-1 g with diagonal F: sum_i g_i^2 / (F_ii + damping).
double natural_expansion_score(std::span<const float> gradient, const FisherDiagonal& fisher, float damping);

// eta * exp(-lambda_n * delta_p^2)
double regularized_score(double eta, std::int64_t delta_p, double lambda_n);

// The when/what rule with strict inequalities; ties yield NoExpansion.
ExpansionKind decide_expansion(double eta_current, double eta_layer, double eta_widen, double tau);

// Scores the current model and every single-mutation candidate on one batch
// and picks the expansion. Never mutates `model`.
ExpansionProposal propose_expansion(const SecnnModel& model, const LabelledBatch& batch,
                                    const ExpansionConfig& config, float l1_coeff, std::uint64_t seed);

// Applies the proposal's mutation with the same noise the candidate was scored with.
std::optional<MutationReport> apply_proposal(SecnnModel& model, const ExpansionProposal& proposal,
                                             const ExpansionConfig& config);

// Noise stream used for the candidate (kind, block) of a proposal seeded with `seed`.
std::uint64_t candidate_seed(std::uint64_t seed, ExpansionKind kind, std::size_t block);

}  // namespace secnn
