#include "secnn/trainer.hpp"

#include <algorithm>
#include <limits>

#include "secnn/errors.hpp"
#include "secnn/ops.hpp"

namespace secnn {

void TrainConfig::validate() const {
  if (batch_size == 0) fail(ErrorCode::Config, "batch_size must be positive");
  if (!(initial_lr > 0.0f)) fail(ErrorCode::Config, "initial_lr must be positive");
  if (lr_patience == 0) fail(ErrorCode::Config, "lr_patience must be positive");
  if (dropout_conv < 0.0f || dropout_conv >= 1.0f) fail(ErrorCode::Config, "dropout_conv must be in [0, 1)");
  if (dropout_fc < 0.0f || dropout_fc >= 1.0f) fail(ErrorCode::Config, "dropout_fc must be in [0, 1)");
  if (!(l1_coeff >= 0.0f)) fail(ErrorCode::Config, "l1_coeff must be >= 0");
  if (flip_probability < 0.0f || flip_probability > 1.0f) fail(ErrorCode::Config, "flip_probability must be in [0, 1]");
  expansion.validate();
}

TrainState TrainState::initial(const TrainConfig& config) {
  TrainState state;
  state.lr = config.initial_lr;
  state.rng.seed(derive_seed(config.seed, 0x747261696eULL));
  return state;
}

std::string_view to_string(CheckpointReason reason) {
  switch (reason) {
    case CheckpointReason::Expansion: return "expansion";
    case CheckpointReason::Best: return "best";
    case CheckpointReason::Final: return "final";
  }
  return "final";
}

double train_epoch(SecnnModel& model, const data::Dataset& train, const TrainConfig& config, TrainState& state,
                   Optimizer& optimizer) {
  if (train.size() == 0) fail(ErrorCode::InvalidArgument, "empty training set");
  const auto order = data::shuffled_indices(train.size(), state.rng);
  double total = 0.0;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    const std::span<const std::size_t> idx(order.data() + begin, end - begin);
    data::Dataset batch = data::gather(train, idx);
    data::random_hflip(batch.images, config.flip_probability, state.rng);

    model.zero_grad();
    Graph g;
    Var logits = model.forward(g, batch.images, Mode::Train, state.rng);
    Var loss = ops::cross_entropy(g, logits, batch.labels);
    if (config.l1_coeff > 0.0f) {
      std::vector<Var> vars;
      for (Parameter* p : model.parameters()) vars.push_back(g.param(*p));
      loss = ops::add(g, loss, ops::l1_penalty(g, vars, config.l1_coeff));
    }
    total += static_cast<double>(g.value(loss)[0]) * static_cast<double>(end - begin);
    g.backward(loss);
    optimizer.step(model, state.lr);
  }
  model.zero_grad();
  return total / static_cast<double>(train.size());
}

EvalResult evaluate(const SecnnModel& model, const data::Dataset& val, std::size_t batch_size) {
  if (val.size() == 0) fail(ErrorCode::InvalidArgument, "empty validation set");
  batch_size = std::max<std::size_t>(batch_size, 1);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < val.size(); begin += batch_size) {
    const std::size_t end = std::min(val.size(), begin + batch_size);
    const Tensor logits = model.predict(slice_rows(val.images, begin, end));
    const std::span<const int> labels(val.labels.data() + begin, end - begin);
    Graph g(false);
    loss += static_cast<double>(g.value(ops::cross_entropy(g, g.constant(logits), labels))[0]) *
            static_cast<double>(end - begin);
    const std::size_t classes = logits.dim(1);
    for (std::size_t n = 0; n < end - begin; ++n) {
      const float* row = logits.ptr() + n * classes;
      const auto arg = static_cast<int>(std::max_element(row, row + classes) - row);
      if (arg == labels[n]) ++correct;
    }
  }
  return {loss / static_cast<double>(val.size()), static_cast<double>(correct) / static_cast<double>(val.size())};
}

bool lr_schedule_step(TrainState& state, double val_accuracy, std::size_t patience) {
  if (val_accuracy > state.best_val_accuracy) {
    state.best_val_accuracy = val_accuracy;
    state.epochs_since_improvement = 0;
    return false;
  }
  if (++state.epochs_since_improvement >= patience) {
    state.lr *= 0.5f;
    state.epochs_since_improvement = 0;
    return true;
  }
  return false;
}

std::uint64_t expansion_seed(std::uint64_t run_seed, std::size_t epoch) {
  return derive_seed(run_seed, 0x657870616e64ULL, epoch);
}

std::optional<ExpansionEvent> maybe_expand(SecnnModel& model, const data::Dataset& train, const TrainConfig& config,
                                           TrainState& state, Optimizer& optimizer, const FitHooks* hooks) {
  if (!config.expansion_enabled) return std::nullopt;
  if (state.cooldown_remaining > 0) {
    --state.cooldown_remaining;
    return std::nullopt;
  }
  const std::uint64_t seed = expansion_seed(config.seed, state.epoch);
  Rng pick(seed);
  auto order = data::shuffled_indices(train.size(), pick);
  order.resize(std::min(order.size(), config.expansion.score_batch_size));
  std::sort(order.begin(), order.end());
  const data::Dataset scoring = data::gather(train, order);

  const ExpansionProposal proposal =
      propose_expansion(model, {scoring.images, scoring.labels}, config.expansion, config.l1_coeff, seed);
  ExpansionEvent event;
  event.kind = proposal.kind;
  event.block = proposal.block;
  event.eta_current = proposal.eta_current;
  event.eta_layer = proposal.eta_layer_best;
  event.eta_widen = proposal.eta_widen_best;
  event.delta_p = proposal.delta_p;
  event.candidates = proposal.candidates;
  event.param_count_after = model.param_count();

  if (const auto report = apply_proposal(model, proposal, config.expansion)) {
    optimizer.on_mutation(*report);
    event.param_count_after = model.param_count();
    state.cooldown_remaining = config.expansion.cooldown_epochs;
    if (hooks && hooks->on_checkpoint) hooks->on_checkpoint(CheckpointReason::Expansion, model, state);
  }
  return event;
}

FitResult fit(SecnnModel& model, const data::Dataset& train, const data::Dataset& val, const TrainConfig& config,
              const FitHooks& hooks) {
  config.validate();
  model.set_dropout(config.dropout_conv, config.dropout_fc);
  auto optimizer = make_optimizer(config.optimizer);
  FitResult result{{}, TrainState::initial(config)};
  TrainState& state = result.state;
  const float anneal_step =
      config.activation_anneal_epochs == 0
          ? std::numeric_limits<float>::infinity()
          : (1.0f - model.config().leaky_slope) / static_cast<float>(config.activation_anneal_epochs);

  for (std::size_t e = 0; e < config.epochs; ++e) {
    MetricsRecord record;
    record.epoch = e + 1;
    record.lr = state.lr;
    record.train_loss = train_epoch(model, train, config, state, *optimizer);
    model.anneal_activations(anneal_step);
    const EvalResult ev = evaluate(model, val, config.batch_size);
    record.val_loss = ev.loss;
    record.val_accuracy = ev.accuracy;
    record.param_count = model.param_count();
    const bool improved = ev.accuracy > state.best_val_accuracy;
    lr_schedule_step(state, ev.accuracy, config.lr_patience);
    state.epoch = e + 1;
    if (improved && hooks.on_checkpoint) hooks.on_checkpoint(CheckpointReason::Best, model, state);
    record.expansion = maybe_expand(model, train, config, state, *optimizer, &hooks);
    state.history.push_back(record);
    if (hooks.on_record) hooks.on_record(record);
  }
  if (config.epochs > 0 && hooks.on_checkpoint) hooks.on_checkpoint(CheckpointReason::Final, model, state);
  result.history = state.history;
  return result;
}

}  // namespace secnn
