#pragma once

// Shared helpers for the unit suites and the acceptance runner: random
// tensors, finite-difference gradient checks, toy models and independent
// reference computations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <functional>
#include <span>
#include <vector>

#include <unistd.h>

#include "secnn/autograd.hpp"
#include "secnn/data.hpp"
#include "secnn/expansion.hpp"
#include "secnn/model.hpp"
#include "secnn/ops.hpp"
#include "secnn/random.hpp"

namespace secnn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, float stddev = 1.0f) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = gaussian(rng, stddev);
  return t;
}

// Values bounded away from zero by `gap`, for inputs of kinked functions.
inline Tensor random_away_from_zero(Shape shape, Rng& rng, float gap = 0.05f) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    const float mag = gap + std::abs(gaussian(rng));
    v = (rng() & 1) ? mag : -mag;
  }
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng() % classes);
  return labels;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
// turning f32 rounding noise into large relative errors.
inline constexpr double kRelErrorFloor = 0.1;

inline double relative_error(double analytic, double numeric, double floor = kRelErrorFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose one-sided slopes disagree, i.e. the stencil straddles a
  // kink of leaky relu, max pooling or L1. Not compared.
  std::size_t nonsmooth = 0;
};

using OpBuilder = std::function<Var(Graph&, std::span<const Var>)>;

// Projects the op output onto a fixed random direction r and compares
// d(r . y)/dx from backward() with central differences of step `h`.
inline GradCheck check_op_gradients(const std::vector<Tensor>& inputs, const OpBuilder& build, std::uint64_t seed,
                                    double h = 1e-3) {
  Rng rng(seed);
  Tensor direction;
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.variable(t));
    Var y = build(g, vars);
    direction = random_tensor(g.value(y).shape(), rng);
    Var loss = ops::sum(g, ops::mul(g, y, g.constant(direction)));
    g.backward(loss);
    for (Var v : vars) analytic.push_back(g.grad(v));
  }
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Graph g(false);
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(g.constant(t));
    const Tensor& y = g.value(build(g, vars));
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(y[i]) * direction[i];
    return acc;
  };
  GradCheck result;
  std::vector<Tensor> xs = inputs;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (std::size_t i = 0; i < xs[t].numel(); ++i) {
      const float saved = xs[t][i];
      xs[t][i] = saved + static_cast<float>(h);
      const double plus = evaluate(xs);
      xs[t][i] = saved - static_cast<float>(h);
      const double minus = evaluate(xs);
      xs[t][i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[t][i], numeric));
      ++result.checked;
    }
  }
  return result;
}

// Tiny model config: 1x8x8 inputs, small head. Two 1-channel blocks give
// 44 parameters. Used wherever exhaustive per-parameter work is needed.
inline ModelConfig toy_config(std::size_t classes = 2, std::size_t hidden = 2) {
  ModelConfig c;
  c.image_channels = 1;
  c.image_size = 8;
  c.num_classes = classes;
  c.head_channels = 1;
  c.hidden_units = hidden;
  c.dropout_conv = 0.0f;
  c.dropout_fc = 0.0f;
  return c;
}

// Every scalar of every parameter perturbed by N(0, stddev) so batchnorm and
// biases are not at their trivial initial values.
inline void jitter_parameters(SecnnModel& model, Rng& rng, float stddev = 0.1f) {
  for (Parameter* p : model.parameters())
    for (auto& v : p->value.data()) v += gaussian(rng, stddev);
}

// Moves every parameter at least `margin` away from zero, clear of the L1 kink.
inline void keep_off_zero(SecnnModel& model, float margin = 2e-3f) {
  for (Parameter* p : model.parameters())
    for (auto& v : p->value.data())
      if (std::abs(v) < margin) v = v < 0.0f ? -margin : margin;
}

// Loss = cross-entropy (+ optional L1) of the model on a fixed batch.
inline GradCheck check_model_gradients(SecnnModel& model, const Tensor& images, std::span<const int> labels, Mode mode,
                                       float l1, std::uint64_t dropout_seed, double h = 1e-3) {
  auto loss_of = [&](SecnnModel& m, Graph& g) {
    Rng rng(dropout_seed);
    Var logits = m.forward(g, images, mode, rng);
    Var loss = ops::cross_entropy(g, logits, labels);
    if (l1 > 0.0f) {
      std::vector<Var> vars;
      for (Parameter* p : m.parameters()) vars.push_back(g.param(*p));
      loss = ops::add(g, loss, ops::l1_penalty(g, vars, l1));
    }
    return loss;
  };
  SecnnModel work = model.clone();
  work.zero_grad();
  {
    Graph g;
    g.backward(loss_of(work, g));
  }
  GradCheck result;
  const auto params = work.parameters();
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const float saved = p->value[i];
      auto eval_at = [&](float v) {
        SecnnModel probe = work.clone();
        const auto pp = probe.parameters();
        const std::size_t idx = static_cast<std::size_t>(std::find(params.begin(), params.end(), p) - params.begin());
        pp[idx]->value[i] = v;
        Graph g(false);
        return static_cast<double>(g.value(loss_of(probe, g))[0]);
      };
      const double up = eval_at(saved + static_cast<float>(h)), down = eval_at(saved - static_cast<float>(h));
      const double mid = eval_at(saved);
      if (relative_error((up - mid) / h, (mid - down) / h) > 1e-2) {
        ++result.nonsmooth;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(p->grad[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

// Per-sample gradients of the unregularized loss, one row per sample, in
// walker order. Each sample gets its own single-sample graph.
inline std::vector<std::vector<double>> per_sample_gradients(const SecnnModel& model, const Tensor& images,
                                                             std::span<const int> labels) {
  std::vector<std::vector<double>> rows;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    SecnnModel m = model.clone();
    m.zero_grad();
    Rng unused(0);
    Graph g;
    Var logits = m.forward(g, slice_rows(images, n, n + 1), Mode::Eval, unused);
    g.backward(ops::cross_entropy(g, logits, labels.subspan(n, 1)));
    std::vector<double> row;
    for (const Parameter* p : std::as_const(m).parameters())
      for (float v : p->grad.data()) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

// (1/N) sum_n g_n g_n^T formed densely.
inline std::vector<std::vector<double>> dense_empirical_fisher(const std::vector<std::vector<double>>& rows) {
  const std::size_t p = rows.front().size();
  std::vector<std::vector<double>> f(p, std::vector<double>(p, 0.0));
  for (const auto& g : rows)
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) f[i][j] += g[i] * g[j];
  for (auto& row : f)
    for (auto& v : row) v /= static_cast<double>(rows.size());
  return f;
}

// Solves A x = b by Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= factor * a[col][c];
      b[r] -= factor * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  return x;
}

// g^T F^-1 g with F = diag(fisher) + damping I, via a dense solve.
inline double dense_natural_score(const std::vector<double>& g, const std::vector<double>& fisher_diag, double damping) {
  const std::size_t n = g.size();
  std::vector<std::vector<double>> f(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) f[i][i] = fisher_diag[i] + damping;
  const auto x = dense_solve(f, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += g[i] * x[i];
  return acc;
}

// Eta of a model computed from per-sample gradients: mean gradient of the
// unregularized loss plus the L1 subgradient, diagonal Fisher in double.
inline double reference_eta(const SecnnModel& model, const Tensor& images, std::span<const int> labels, float l1,
                            double damping) {
  const auto rows = per_sample_gradients(model, images, labels);
  const std::size_t p = rows.front().size();
  std::vector<double> g(p, 0.0), fisher(p, 0.0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < p; ++i) {
      g[i] += r[i] / static_cast<double>(rows.size());
      fisher[i] += r[i] * r[i] / static_cast<double>(rows.size());
    }
  std::size_t i = 0;
  for (const Parameter* p_ : model.parameters())
    for (float v : p_->value.data()) {
      if (v > 0.0f) g[i] += l1;
      if (v < 0.0f) g[i] -= l1;
      ++i;
    }
  double eta = 0.0;
  for (std::size_t k = 0; k < p; ++k) eta += g[k] * g[k] / (fisher[k] + damping);
  return eta;
}

struct BruteForceChoice {
  ExpansionKind kind = ExpansionKind::NoExpansion;
  std::optional<std::size_t> block;
  double eta_current = 0.0;
  double best_layer = -INFINITY;
  double best_widen = -INFINITY;
};

// Enumerates every candidate independently of propose_expansion: mutates
// fresh clones with the same noise streams, rescores with reference_eta and
// applies the when/where/what rule as written.
inline BruteForceChoice brute_force_expansion(const SecnnModel& model, const Tensor& images,
                                              std::span<const int> labels, const ExpansionConfig& config, float l1,
                                              std::uint64_t seed) {
  BruteForceChoice out;
  out.eta_current = reference_eta(model, images, labels, l1, config.fisher_damping);
  std::optional<std::size_t> layer_block, widen_block;
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    if (model.blocks()[b].units.size() < model.blocks()[b].capacity) {
      SecnnModel m = model.clone();
      Rng rng(candidate_seed(seed, ExpansionKind::AddLayer, b));
      const double before = static_cast<double>(m.param_count());
      m.insert_identity_unit(b, config.noise_coeff, rng);
      const double dp = static_cast<double>(m.param_count()) - before;
      const double s = reference_eta(m, images, labels, l1, config.fisher_damping) *
                       std::exp(-static_cast<double>(config.lambda_n) * dp * dp);
      if (s > out.best_layer) {
        out.best_layer = s;
        layer_block = b;
      }
    }
    const std::size_t ceiling = model.channel_ceiling();
    if (ceiling == 0 || model.blocks()[b].out_channels + config.channel_increment <= ceiling) {
      SecnnModel m = model.clone();
      Rng rng(candidate_seed(seed, ExpansionKind::WidenChannels, b));
      const double before = static_cast<double>(m.param_count());
      m.widen_block(b, config.channel_increment, config.noise_coeff, rng);
      const double dp = static_cast<double>(m.param_count()) - before;
      const double s = reference_eta(m, images, labels, l1, config.fisher_damping) *
                       std::exp(-static_cast<double>(config.lambda_n) * dp * dp);
      if (s > out.best_widen) {
        out.best_widen = s;
        widen_block = b;
      }
    }
  }
  const double tau = config.tau;
  if (out.best_layer > out.best_widen && out.best_layer / out.eta_current > tau) {
    out.kind = ExpansionKind::AddLayer;
    out.block = layer_block;
  } else if (out.best_widen > out.best_layer && out.best_widen / out.eta_current > tau) {
    out.kind = ExpansionKind::WidenChannels;
    out.block = widen_block;
  }
  return out;
}

// Multinomial logistic regression trained by full-batch gradient descent in
// double; returns held-out accuracy.
inline double linear_probe_accuracy(const data::Dataset& train, const data::Dataset& test, int epochs = 150,
                                    double lr = 0.5) {
  const std::size_t d = train.images.numel() / train.size();
  const std::size_t k = train.class_count;
  std::vector<double> w(k * d, 0.0), b(k, 0.0);
  std::vector<double> gw(k * d), gb(k), logits(k);
  for (int e = 0; e < epochs; ++e) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t n = 0; n < train.size(); ++n) {
      const float* x = train.images.ptr() + n * d;
      double mx = -INFINITY;
      for (std::size_t c = 0; c < k; ++c) {
        double z = b[c];
        for (std::size_t j = 0; j < d; ++j) z += w[c * d + j] * x[j];
        logits[c] = z;
        mx = std::max(mx, z);
      }
      double norm = 0.0;
      for (auto& z : logits) norm += (z = std::exp(z - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = logits[c] / norm - (static_cast<int>(c) == train.labels[n] ? 1.0 : 0.0);
        gb[c] += delta;
        for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += delta * x[j];
      }
    }
    const double scale = lr / static_cast<double>(train.size() * d) * 100.0;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * gw[i];
    for (std::size_t c = 0; c < k; ++c) b[c] -= lr * gb[c] / static_cast<double>(train.size());
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < test.size(); ++n) {
    const float* x = test.images.ptr() + n * d;
    std::size_t best = 0;
    double best_z = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double z = b[c];
      for (std::size_t j = 0; j < d; ++j) z += w[c * d + j] * x[j];
      if (z > best_z) {
        best_z = z;
        best = c;
      }
    }
    if (static_cast<int>(best) == test.labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// One randomized toy setting for comparing propose_expansion against the
// brute-force enumerator. Seeds cycle through capacity exclusions, channel
// ceilings and heavy regularization so every outcome kind shows up.
struct DecisionScenario {
  SecnnModel model;
  Tensor images;
  std::vector<int> labels;
  ExpansionConfig config;
  float l1 = 0.0f;
  std::uint64_t proposal_seed = 0;
};

inline DecisionScenario decision_scenario(std::uint64_t seed) {
  Rng rng(derive_seed(0x5ce7a810, seed));
  const std::size_t capacity = seed % 4 == 0 ? 1 : 2 + seed % 2;
  const std::size_t channels = 1 + seed % 2;
  SecnnModel model = SecnnModel::build_initial(2, channels, capacity, toy_config(), rng);
  if (capacity > 1 && seed % 3 == 0) model.insert_identity_unit(seed % 2, 0.0f, rng);
  if (seed % 7 == 5 || seed % 6 == 5) model.set_channel_ceiling(channels);
  jitter_parameters(model, rng, 0.3f);
  ExpansionConfig config;
  config.channel_increment = 1 + seed % 2;
  config.noise_coeff = seed % 2 == 0 ? 1e-4f : 5e-2f;
  if (seed % 5 == 4) config.lambda_n = 1e-2f;
  const std::size_t n = 4 + seed % 5;
  Tensor images = random_tensor({n, 1, 8, 8}, rng);
  std::vector<int> labels = random_labels(n, 2, rng);
  const float l1 = seed % 3 == 1 ? 1e-3f : 0.0f;
  // Near a minimum of the batch loss eta_current is small and new capacity stands out.
  if (seed % 4 == 2 || seed % 6 == 5) {
    for (int step = 0; step < 300; ++step) {
      const auto g = mean_gradient(model, LabelledBatch{images, labels}, 0.0f);
      std::size_t i = 0;
      for (Parameter* p : model.parameters())
        for (auto& v : p->value.data()) v -= 0.1f * g[i++];
    }
  }
  return DecisionScenario{std::move(model), std::move(images), std::move(labels), config, l1, derive_seed(seed, 77)};
}

inline bool same_model_state(const SecnnModel& a, const SecnnModel& b) {
  if (!(a.describe() == b.describe())) return false;
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(pa[i]->value == pb[i]->value)) return false;
  const auto sa = a.running_stats(), sb = b.running_stats();
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (!(*sa[i] == *sb[i])) return false;
  return true;
}

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag)
      : path(std::filesystem::temp_directory_path() / ("secnn_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace secnn::testing
