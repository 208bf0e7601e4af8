#include <doctest.h>

#include <cmath>

#include "secnn/report.hpp"
#include "secnn/trainer.hpp"
#include "support.hpp"

using namespace secnn;
namespace t = secnn::testing;

namespace {

SecnnModel small_model(std::uint64_t seed, std::size_t channels = 4, std::size_t capacity = 3) {
  Rng rng(seed);
  return SecnnModel::build_initial(3, channels, capacity, ModelConfig{}, rng);
}

data::Dataset blobs(std::size_t n, std::uint64_t seed, std::size_t classes = 10) {
  return data::synthetic_dataset(data::SyntheticKind::SeparableBlobs, n, classes, seed);
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 9;
  c.expansion.score_batch_size = 16;
  return c;
}

bool same_parameters(const SecnnModel& a, const SecnnModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  return true;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-exact") {
  const data::Dataset train = blobs(40, 1);
  for (OptimizerKind kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    SecnnModel m = small_model(2);
    const SecnnModel before = m.clone();
    TrainConfig cfg = quick_config();
    cfg.optimizer = kind;
    TrainState state = TrainState::initial(cfg);
    state.lr = 0.0f;
    auto opt = make_optimizer(kind);
    train_epoch(m, train, cfg, state, *opt);
    CHECK(same_parameters(m, before));
  }
}

TEST_CASE("a 32-sample memorization task drives the training loss below 0.1") {
  const data::Dataset train = data::synthetic_dataset(data::SyntheticKind::StripedPatterns, 32, 4, 3);
  SecnnModel m = small_model(4, 8);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.dropout_conv = 0.0f;
  cfg.dropout_fc = 0.0f;
  cfg.flip_probability = 0.0f;
  cfg.l1_coeff = 0.0f;
  cfg.seed = 5;
  m.set_dropout(0.0f, 0.0f);
  TrainState state = TrainState::initial(cfg);
  auto opt = make_optimizer(cfg.optimizer);
  double first = 0.0, last = 0.0;
  for (int e = 0; e < 30; ++e) {
    last = train_epoch(m, train, cfg, state, *opt);
    if (e == 0) first = last;
  }
  MESSAGE("loss " << first << " -> " << last);
  CHECK(last < first);
  CHECK(last < 0.1);
}

TEST_CASE("small sgd steps descend the loss") {
  SecnnModel m = small_model(7);
  const data::Dataset d = blobs(20, 8);
  const LabelledBatch batch{d.images, d.labels};
  const double before = evaluate(m, d).loss;
  mean_gradient(m, batch, 0.0f);
  Sgd sgd;
  sgd.step(m, 1e-3f);
  CHECK(evaluate(m, d).loss <= before);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  SUBCASE("15 flat epochs halve the rate") {
    TrainState s = TrainState::initial(cfg);
    lr_schedule_step(s, 0.5, 15);
    for (int i = 0; i < 14; ++i) CHECK_FALSE(lr_schedule_step(s, 0.5, 15));
    CHECK(s.lr == 2e-3f);
    CHECK(lr_schedule_step(s, 0.4, 15));
    CHECK(s.lr == 1e-3f);
    CHECK(s.epochs_since_improvement == 0);
  }
  SUBCASE("30 flat epochs halve it twice") {
    TrainState s = TrainState::initial(cfg);
    lr_schedule_step(s, 0.5, 15);
    for (int i = 0; i < 30; ++i) lr_schedule_step(s, 0.5, 15);
    CHECK(s.lr == 5e-4f);
  }
  SUBCASE("improvement at the 14th epoch resets the counter") {
    TrainState s = TrainState::initial(cfg);
    lr_schedule_step(s, 0.5, 15);
    for (int i = 0; i < 13; ++i) lr_schedule_step(s, 0.5, 15);
    CHECK(s.epochs_since_improvement == 13);
    lr_schedule_step(s, 0.51, 15);
    CHECK(s.epochs_since_improvement == 0);
    CHECK(s.best_val_accuracy == 0.51);
    for (int i = 0; i < 14; ++i) lr_schedule_step(s, 0.51, 15);
    CHECK(s.lr == 2e-3f);
  }
  SUBCASE("the first epoch always counts as an improvement") {
    TrainState s = TrainState::initial(cfg);
    lr_schedule_step(s, 0.0, 15);
    CHECK(s.epochs_since_improvement == 0);
    CHECK(s.best_val_accuracy == 0.0);
  }
}

TEST_CASE("maybe_expand") {
  const data::Dataset train = blobs(24, 10);
  TrainConfig cfg = quick_config();
  auto opt = make_optimizer(cfg.optimizer);
  int checkpoints = 0;
  FitHooks hooks;
  hooks.on_checkpoint = [&](CheckpointReason r, const SecnnModel&, const TrainState&) {
    CHECK(r == CheckpointReason::Expansion);
    ++checkpoints;
  };

  SUBCASE("cooldown skips the proposal") {
    SecnnModel m = small_model(11);
    TrainState s = TrainState::initial(cfg);
    s.cooldown_remaining = 3;
    CHECK_FALSE(maybe_expand(m, train, cfg, s, *opt, &hooks).has_value());
    CHECK(s.cooldown_remaining == 2);
    CHECK(checkpoints == 0);
  }
  SUBCASE("no expansion leaves the model alone") {
    SecnnModel m = small_model(12);
    const SecnnModel before = m.clone();
    cfg.expansion.tau = 1e9f;
    TrainState s = TrainState::initial(cfg);
    const auto ev = maybe_expand(m, train, cfg, s, *opt, &hooks);
    REQUIRE(ev.has_value());
    CHECK(ev->kind == ExpansionKind::NoExpansion);
    CHECK(t::same_model_state(m, before));
    CHECK(s.cooldown_remaining == 0);
    CHECK(checkpoints == 0);
  }
  SUBCASE("an applied layer sets the cooldown and checkpoints") {
    SecnnModel m = small_model(13);
    m.set_channel_ceiling(4);
    cfg.expansion.tau = 1.0001f;
    TrainState s = TrainState::initial(cfg);
    const std::size_t units = m.num_units();
    const auto ev = maybe_expand(m, train, cfg, s, *opt, &hooks);
    REQUIRE(ev.has_value());
    CHECK(ev->kind == ExpansionKind::AddLayer);
    CHECK(m.num_units() == units + 1);
    CHECK(s.cooldown_remaining == 10);
    CHECK(checkpoints == 1);
    CHECK(ev->param_count_after == m.param_count());
    CHECK(ev->delta_p == 4 * 4 * 9 + 4 + 8);
  }
  SUBCASE("disabled expansion never proposes") {
    SecnnModel m = small_model(14);
    cfg.expansion_enabled = false;
    TrainState s = TrainState::initial(cfg);
    CHECK_FALSE(maybe_expand(m, train, cfg, s, *opt, &hooks).has_value());
  }
}

TEST_CASE("new parameters start with zero Adam moments") {
  SecnnModel m = small_model(15);
  const data::Dataset d = blobs(10, 16);
  Adam adam;
  mean_gradient(m, LabelledBatch{d.images, d.labels}, 0.0f);
  adam.step(m, 1e-3f);
  const std::uint64_t w_id = m.blocks()[0].units[0].weight.id;
  const Tensor old_first = adam.moments(w_id)->first;
  Rng rng(17);
  const MutationReport r = m.widen_block(0, 2, 1e-4f, rng);
  adam.on_mutation(r);
  const Tensor& grown = adam.moments(w_id)->first;
  REQUIRE(grown.dim(0) == 6);
  for (std::size_t i = 0; i < old_first.numel(); ++i) CHECK(grown[i] == old_first[i]);
  for (std::size_t i = old_first.numel(); i < grown.numel(); ++i) CHECK(grown[i] == 0.0f);
  const MutationReport ins = m.insert_identity_unit(1, 1e-4f, rng);
  adam.on_mutation(ins);
  for (std::uint64_t id : ins.created) CHECK(adam.moments(id) == nullptr);
}

TEST_CASE("evaluate") {
  const data::Dataset val = blobs(50, 18);
  SecnnModel m = small_model(19);
  SUBCASE("constant prediction on balanced data") {
    auto params = m.parameters();
    const auto named = m.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
      if (named[i].name == "head.output.weight") params[i]->value.fill(0.0f);
      if (named[i].name == "head.output.bias") params[i]->value[3] = 1.0f;
    }
    CHECK(evaluate(m, val, 7).accuracy == doctest::Approx(0.1));
  }
  SUBCASE("deterministic and bounded") {
    const EvalResult a = evaluate(m, val, 512), b = evaluate(m, val, 512), c = evaluate(m, val, 7);
    CHECK(a.loss == b.loss);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.accuracy >= 0.0);
    CHECK(a.accuracy <= 1.0);
    CHECK(c.accuracy == a.accuracy);
    CHECK(c.loss == doctest::Approx(a.loss).epsilon(1e-6));
  }
}

TEST_CASE("fit") {
  const data::Dataset train = blobs(32, 20), val = blobs(20, 21);
  SUBCASE("zero epochs") {
    SecnnModel m = small_model(22);
    const SecnnModel before = m.clone();
    TrainConfig cfg = quick_config();
    cfg.epochs = 0;
    int calls = 0;
    FitHooks hooks;
    hooks.on_record = [&](const MetricsRecord&) { ++calls; };
    hooks.on_checkpoint = [&](CheckpointReason, const SecnnModel&, const TrainState&) { ++calls; };
    const FitResult r = fit(m, train, val, cfg, hooks);
    CHECK(r.history.empty());
    CHECK(calls == 0);
    CHECK(t::same_model_state(m, before));
  }
  SUBCASE("identical inputs give identical histories") {
    TrainConfig cfg = quick_config();
    cfg.epochs = 4;
    cfg.expansion.tau = 1.0001f;
    cfg.expansion.cooldown_epochs = 1;
    SecnnModel a = small_model(23), b = small_model(23);
    const FitResult ra = fit(a, train, val, cfg), rb = fit(b, train, val, cfg);
    REQUIRE(ra.history.size() == 4);
    REQUIRE(rb.history.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(metrics_line(ra.history[i]) == metrics_line(rb.history[i]));
    CHECK(a.describe() == b.describe());
    CHECK(t::same_model_state(a, b));
    std::size_t expansions = 0;
    for (const auto& rec : ra.history) expansions += rec.expanded();
    CHECK(expansions == 2);
  }
  SUBCASE("cooldown law, monotone size and one checkpoint per expansion") {
    TrainConfig cfg = quick_config();
    cfg.epochs = 25;
    cfg.expansion.tau = 1.0001f;
    std::vector<std::size_t> expansion_checkpoints;
    std::size_t best = 0, final_ = 0;
    FitHooks hooks;
    hooks.on_checkpoint = [&](CheckpointReason r, const SecnnModel&, const TrainState& s) {
      if (r == CheckpointReason::Expansion) expansion_checkpoints.push_back(s.epoch);
      if (r == CheckpointReason::Best) ++best;
      if (r == CheckpointReason::Final) ++final_;
    };
    SecnnModel m = small_model(24);
    const FitResult r = fit(m, train, val, cfg, hooks);
    std::vector<std::size_t> epochs;
    for (std::size_t i = 0; i < r.history.size(); ++i) {
      if (r.history[i].expanded()) epochs.push_back(r.history[i].epoch);
      if (i > 0) CHECK(r.history[i].param_count >= r.history[i - 1].param_count);
    }
    CHECK(epochs == std::vector<std::size_t>{1, 12, 23});
    for (std::size_t i = 1; i < epochs.size(); ++i) CHECK(epochs[i] - epochs[i - 1] >= 10);
    CHECK(expansion_checkpoints == epochs);
    CHECK(best >= 1);
    CHECK(final_ == 1);
  }
}
