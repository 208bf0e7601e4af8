#include <doctest.h>

#include <cmath>
#include <vector>

#include "secnn/errors.hpp"
#include "secnn/ops.hpp"
#include "support.hpp"

using namespace secnn;
using secnn::testing::check_op_gradients;
using secnn::testing::random_away_from_zero;
using secnn::testing::random_tensor;

namespace {

constexpr double kTol = 1e-2;
constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

Tensor spaced_for_maxpool(Shape shape, Rng& rng) {
  // A random permutation of well separated values, so no window holds a near tie.
  Tensor t(std::move(shape));
  std::vector<std::size_t> order(t.numel());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); ++i) t[order[i]] = 0.05f * static_cast<float>(i) - 1.0f;
  return t;
}

}  // namespace

TEST_CASE("backward: x^2 at 3 gives 6") {
  Graph g;
  Var x = g.variable(Tensor::scalar(3.0f));
  g.backward(ops::mul(g, x, x));
  CHECK(g.grad(x)[0] == 6.0f);
}

TEST_CASE("a consumed graph refuses a second backward") {
  Graph g;
  Var x = g.variable(Tensor::scalar(2.0f));
  Var y = ops::scale(g, x, 2.0f);
  g.backward(y);
  try {
    g.backward(y);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GraphConsumed);
  }
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
  Rng rng(9);
  const Tensor x0 = random_tensor({2, 3}, rng), w = random_tensor({4, 3}, rng), b = random_tensor({4}, rng);
  auto run = [&](int which) {
    Graph g;
    Var x = g.variable(x0);
    Var y = ops::linear(g, x, g.constant(w), g.constant(b));
    Var l1 = ops::sum(g, ops::mul(g, y, y));
    Var l2 = ops::sum(g, ops::scale(g, y, 3.0f));
    g.backward(which == 0 ? l1 : which == 1 ? l2 : ops::add(g, l1, l2));
    return g.grad(x);
  };
  const Tensor a = run(0), b2 = run(1), both = run(2);
  for (std::size_t i = 0; i < both.numel(); ++i) CHECK(both[i] == doctest::Approx(a[i] + b2[i]).epsilon(1e-5));
}

TEST_CASE("conv2d") {
  SUBCASE("dirac kernel is an exact identity") {
    Rng rng(1);
    const Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor w({3, 3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0f;
    Graph g(false);
    const Tensor& y = g.value(ops::conv2d(g, g.constant(x), g.constant(w), g.constant(Tensor({3})), 1, 1));
    CHECK(y == x);
  }
  SUBCASE("hand computed 2x2 with padding") {
    Graph g(false);
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor w({1, 1, 3, 3}, 1.0f);
    const Tensor& y = g.value(ops::conv2d(g, g.constant(x), g.constant(w), g.constant(Tensor({1}, 0.5f)), 1, 1));
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 10.5f);
  }
  SUBCASE("channel mismatch is a shape error") {
    Graph g(false);
    CHECK_THROWS_AS(ops::conv2d(g, g.constant(Tensor({1, 2, 4, 4})), g.constant(Tensor({1, 3, 3, 3})),
                                g.constant(Tensor({1})), 1, 1),
                    Error);
  }
  SUBCASE("gradients") {
    for (auto seed : kSeeds) {
      Rng rng(seed);
      struct Case {
        Shape x, w;
        std::size_t stride, pad;
      };
      for (const Case& c : {Case{{2, 2, 5, 5}, {3, 2, 3, 3}, 1, 1}, Case{{1, 3, 6, 6}, {2, 3, 3, 3}, 2, 0},
                            Case{{2, 4, 3, 3}, {2, 4, 1, 1}, 1, 0}}) {
        const auto r = check_op_gradients(
            {random_tensor(c.x, rng), random_tensor(c.w, rng), random_tensor({c.w[0]}, rng)},
            [&](Graph& g, std::span<const Var> v) { return ops::conv2d(g, v[0], v[1], v[2], c.stride, c.pad); }, seed);
        CHECK(r.max_rel_error < kTol);
      }
    }
  }
}

TEST_CASE("batchnorm2d") {
  SUBCASE("train mode normalizes per channel and updates running stats") {
    Rng rng(2);
    Tensor x = random_tensor({4, 2, 3, 3}, rng, 3.0f);
    ops::BatchNormStats stats{Tensor({2}, 0.0f), Tensor({2}, 1.0f)};
    Graph g(false);
    const Tensor& y = g.value(ops::batchnorm2d(g, g.constant(x), g.constant(Tensor({2}, 1.0f)),
                                               g.constant(Tensor({2}, 0.0f)), stats, Mode::Train));
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0, sq = 0.0, xmean = 0.0, xsq = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 9; ++i) {
          const double v = y.at(n, c, i / 3, i % 3), u = x.at(n, c, i / 3, i % 3);
          mean += v / 36.0;
          sq += v * v / 36.0;
          xmean += u / 36.0;
          xsq += u * u;
        }
      CHECK(mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-5));
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-3));
      const double unbiased = (xsq - 36.0 * xmean * xmean) / 35.0;
      CHECK(stats.running_mean[c] == doctest::Approx(0.1 * xmean).epsilon(1e-4));
      CHECK(stats.running_var[c] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-4));
    }
  }
  SUBCASE("gradients in train and eval mode") {
    for (auto seed : kSeeds) {
      Rng rng(seed);
      for (Mode mode : {Mode::Train, Mode::Eval}) {
        ops::BatchNormStats stats{random_tensor({3}, rng, 0.3f), Tensor({3}, 1.5f)};
        const auto r = check_op_gradients(
            {random_tensor({3, 3, 2, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
            [&](Graph& g, std::span<const Var> v) {
              ops::BatchNormStats scratch = stats;
              return ops::batchnorm2d(g, v[0], v[1], v[2], scratch, mode);
            },
            seed);
        CHECK(r.max_rel_error < kTol);
      }
    }
  }
}

TEST_CASE("leaky relu, dropout and pooling") {
  SUBCASE("leaky relu values and gradients") {
    Graph g(false);
    const Tensor& y = g.value(ops::leaky_relu(g, g.constant(Tensor({3}, {-1.0f, 0.0f, 2.0f})), 0.2f));
    CHECK(y[0] == doctest::Approx(-0.2f));
    CHECK(y[1] == 0.0f);
    CHECK(y[2] == 2.0f);
    for (auto seed : kSeeds) {
      Rng rng(seed);
      const auto r = check_op_gradients({random_away_from_zero({2, 3, 4}, rng)},
                                        [](Graph& g, std::span<const Var> v) { return ops::leaky_relu(g, v[0], 0.2f); },
                                        seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
  SUBCASE("dropout is the identity in eval mode and at rate zero") {
    Rng rng(4);
    const Tensor x = random_tensor({2, 8}, rng);
    Graph g(false);
    Var in = g.constant(x);
    CHECK(g.value(ops::dropout(g, in, 0.5f, Mode::Eval, rng)) == x);
    CHECK(g.value(ops::dropout(g, in, 0.0f, Mode::Train, rng)) == x);
  }
  SUBCASE("dropout keeps the expectation and has a mask gradient") {
    Rng rng(6);
    Graph g(false);
    const Tensor& y = g.value(ops::dropout(g, g.constant(Tensor({20000}, 1.0f)), 0.25f, Mode::Train, rng));
    double mean = 0.0;
    std::size_t zeros = 0;
    for (float v : y.data()) {
      mean += v / 20000.0;
      if (v == 0.0f) ++zeros;
      else CHECK(v == doctest::Approx(1.0f / 0.75f));
    }
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
    CHECK(static_cast<double>(zeros) / 20000.0 == doctest::Approx(0.25).epsilon(0.05));
    for (auto seed : kSeeds) {
      Rng data_rng(seed);
      const auto r = check_op_gradients({random_tensor({3, 5}, data_rng)},
                                        [&](Graph& gg, std::span<const Var> v) {
                                          Rng mask(seed * 100);
                                          return ops::dropout(gg, v[0], 0.3f, Mode::Train, mask);
                                        },
                                        seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
  SUBCASE("maxpool picks window maxima; first maximum wins on ties") {
    Graph g;
    Var x = g.variable(Tensor({1, 1, 2, 2}, {5.0f, 5.0f, 1.0f, 2.0f}));
    Var y = ops::maxpool2d(g, x, 2, 2);
    CHECK(g.value(y)[0] == 5.0f);
    g.backward(ops::sum(g, y));
    const Tensor grad = g.grad(x);
    CHECK(grad[0] == 1.0f);
    CHECK(grad[1] == 0.0f);
    for (auto seed : kSeeds) {
      Rng rng(seed);
      const auto r = check_op_gradients({spaced_for_maxpool({2, 2, 4, 4}, rng)},
                                        [](Graph& gg, std::span<const Var> v) { return ops::maxpool2d(gg, v[0], 2, 2); },
                                        seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
  SUBCASE("avgpool") {
    Graph g(false);
    const Tensor& y = g.value(ops::avgpool2d(g, g.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 6})), 2));
    CHECK(y[0] == 3.0f);
    CHECK_THROWS_AS(ops::avgpool2d(g, g.constant(Tensor({1, 1, 3, 3})), 2), Error);
    for (auto seed : kSeeds) {
      Rng rng(seed);
      const auto r = check_op_gradients({random_tensor({2, 3, 4, 4}, rng)},
                                        [](Graph& gg, std::span<const Var> v) { return ops::avgpool2d(gg, v[0], 2); },
                                        seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
}

TEST_CASE("elementwise, reduction and linear ops") {
  for (auto seed : kSeeds) {
    Rng rng(seed);
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    CHECK(check_op_gradients({a, b}, [](Graph& g, std::span<const Var> v) { return ops::add(g, v[0], v[1]); }, seed)
              .max_rel_error < kTol);
    CHECK(check_op_gradients({a, b}, [](Graph& g, std::span<const Var> v) { return ops::mul(g, v[0], v[1]); }, seed)
              .max_rel_error < kTol);
    CHECK(check_op_gradients({a}, [](Graph& g, std::span<const Var> v) { return ops::scale(g, v[0], -1.5f); }, seed)
              .max_rel_error < kTol);
    CHECK(check_op_gradients({a}, [](Graph& g, std::span<const Var> v) { return ops::sum(g, v[0]); }, seed)
              .max_rel_error < kTol);
    CHECK(check_op_gradients({random_tensor({2, 3, 2, 2}, rng)},
                             [](Graph& g, std::span<const Var> v) { return ops::flatten(g, v[0]); }, seed)
              .max_rel_error < kTol);
    CHECK(check_op_gradients({random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
                             [](Graph& g, std::span<const Var> v) { return ops::linear(g, v[0], v[1], v[2]); }, seed)
              .max_rel_error < kTol);
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits give ln K and the closed-form gradient") {
    Graph g;
    Var logits = g.variable(Tensor({2, 10}, 0.0f));
    const std::vector<int> labels{3, 7};
    Var loss = ops::cross_entropy(g, logits, labels);
    CHECK(g.value(loss)[0] == doctest::Approx(2.302585).epsilon(1e-6));
    g.backward(loss);
    const Tensor grad = g.grad(logits);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 10; ++k) {
        const double expected = (0.1 - (static_cast<int>(k) == labels[n] ? 1.0 : 0.0)) / 2.0;
        CHECK(grad[n * 10 + k] == doctest::Approx(expected).epsilon(1e-6));
      }
  }
  SUBCASE("confident correct logits drive the loss to zero; it is never negative") {
    for (float mag : {1.0f, 10.0f, 100.0f}) {
      Graph g(false);
      Tensor logits({1, 3}, 0.0f);
      logits[1] = mag;
      const std::vector<int> labels{1};
      const float loss = g.value(ops::cross_entropy(g, g.constant(logits), labels))[0];
      CHECK(loss >= 0.0f);
      if (mag == 100.0f) CHECK(loss < 1e-6f);
    }
  }
  SUBCASE("out-of-range label") {
    Graph g(false);
    const std::vector<int> labels{3};
    try {
      ops::cross_entropy(g, g.constant(Tensor({1, 3})), labels);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidLabel);
    }
  }
  SUBCASE("gradients") {
    for (auto seed : kSeeds) {
      Rng rng(seed);
      const auto labels = testing::random_labels(4, 5, rng);
      const auto r = check_op_gradients(
          {random_tensor({4, 5}, rng, 2.0f)},
          [&](Graph& g, std::span<const Var> v) { return ops::cross_entropy(g, v[0], labels); }, seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
}

TEST_CASE("l1 penalty") {
  Parameter p(1, Tensor({3}, {-2.0f, 0.0f, 4.0f}));
  SUBCASE("value and subgradient") {
    Graph g;
    std::vector<Var> vars{g.param(p)};
    Var pen = ops::l1_penalty(g, vars, 1e-5f);
    CHECK(g.value(pen)[0] == doctest::Approx(6e-5f));
    g.backward(pen);
    CHECK(p.grad[0] == doctest::Approx(-1e-5f));
    CHECK(p.grad[1] == 0.0f);
    CHECK(p.grad[2] == doctest::Approx(1e-5f));
  }
  SUBCASE("coefficient zero") {
    Graph g;
    std::vector<Var> vars{g.param(p)};
    CHECK(g.value(ops::l1_penalty(g, vars, 0.0f))[0] == 0.0f);
  }
  SUBCASE("single value -2 with 1e-5") {
    Parameter q(2, Tensor::scalar(-2.0f));
    Graph g;
    std::vector<Var> vars{g.param(q)};
    CHECK(g.value(ops::l1_penalty(g, vars, 1e-5f))[0] == doctest::Approx(2e-5f));
  }
  SUBCASE("gradients over several tensors") {
    for (auto seed : kSeeds) {
      Rng rng(seed);
      const auto r = check_op_gradients({random_away_from_zero({3, 2}, rng), random_away_from_zero({4}, rng)},
                                        [](Graph& g, std::span<const Var> v) { return ops::l1_penalty(g, v, 0.7f); },
                                        seed);
      CHECK(r.max_rel_error < kTol);
    }
  }
}
