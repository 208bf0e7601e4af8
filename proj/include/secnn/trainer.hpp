#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "secnn/data.hpp"
#include "secnn/expansion.hpp"
#include "secnn/model.hpp"
#include "secnn/optimizer.hpp"
#include "secnn/random.hpp"

namespace secnn {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 512;
  float initial_lr = 2e-3f;
  // Epochs without a new best validation accuracy before the lr is halved.
  std::size_t lr_patience = 15;
  float dropout_conv = 0.1f;
  float dropout_fc = 0.05f;
  float l1_coeff = 1e-5f;
  std::uint64_t seed = 0;
  float flip_probability = 0.5f;
  OptimizerKind optimizer = OptimizerKind::Adam;
  // Epochs over which a freshly inserted unit's slope moves from 1 to the
  // configured leaky slope. Zero snaps it at the end of the next epoch.
  std::size_t activation_anneal_epochs = 10;
  bool expansion_enabled = true;
  ExpansionConfig expansion;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct ExpansionEvent {
  ExpansionKind kind = ExpansionKind::NoExpansion;
  std::optional<std::size_t> block;
  double eta_current = 0.0;
  double eta_layer = kNoCandidate;
  double eta_widen = kNoCandidate;
  std::int64_t delta_p = 0;
  std::size_t param_count_after = 0;
  std::vector<CandidateScore> candidates;
};

struct MetricsRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  // Size of the model that produced this epoch's validation numbers.
  std::size_t param_count = 0;
  float lr = 0.0f;
  // Present whenever a proposal was computed this epoch (kind may be none).
  std::optional<ExpansionEvent> expansion;

  bool expanded() const { return expansion && expansion->kind != ExpansionKind::NoExpansion; }
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  float lr = 0.0f;
  double best_val_accuracy = -1.0;
  std::size_t epochs_since_improvement = 0;
  std::size_t cooldown_remaining = 0;
  Rng rng;
  std::vector<MetricsRecord> history;

  static TrainState initial(const TrainConfig& config);
};

enum class CheckpointReason { Expansion, Best, Final };

std::string_view to_string(CheckpointReason reason);

struct FitHooks {
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(CheckpointReason, const SecnnModel&, const TrainState&)> on_checkpoint;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// One shuffled pass with flips and dropout. Returns the mean training objective
// (cross-entropy plus L1) weighted by batch size.
double train_epoch(SecnnModel& model, const data::Dataset& train, const TrainConfig& config, TrainState& state,
                   Optimizer& optimizer);

EvalResult evaluate(const SecnnModel& model, const data::Dataset& val, std::size_t batch_size = 512);

// Returns true when the lr was halved.
bool lr_schedule_step(TrainState& state, double val_accuracy, std::size_t patience);

// Cooldown handling, proposal, mutation, optimizer bookkeeping and the
// expansion checkpoint. Returns the proposal outcome when one was computed.
std::optional<ExpansionEvent> maybe_expand(SecnnModel& model, const data::Dataset& train, const TrainConfig& config,
                                           TrainState& state, Optimizer& optimizer, const FitHooks* hooks = nullptr);

// Seed of the scoring subset and mutation noise for a given epoch.
std::uint64_t expansion_seed(std::uint64_t run_seed, std::size_t epoch);

struct FitResult {
  std::vector<MetricsRecord> history;
  TrainState state;
};

// epochs x (train -> anneal -> evaluate -> lr schedule -> expansion check).
FitResult fit(SecnnModel& model, const data::Dataset& train, const data::Dataset& val, const TrainConfig& config,
              const FitHooks& hooks = {});

}  // namespace secnn
