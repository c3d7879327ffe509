#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "support.hpp"

namespace muvam {
namespace {

using testing::gen_size;
using testing::gen_tensor;
using testing::gen_tensor_off_zero;
using testing::op_gradient_error;

// ---------------------------------------------------------------------------
// Tensor

TEST(Tensor, ConstructionChecksSize) {
  EXPECT_THROW(Tensor<float>(Shape{2, 3}, std::vector<float>(5)), DimensionError);
  Tensor<float> t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(shape_string(t.shape), "[2x3]");
}

TEST(Tensor, CastPreservesValues) {
  Tensor<double> d(Shape{3}, {0.5, -1.25, 2.0});
  Tensor<float> f = d.cast<float>();
  EXPECT_EQ(f.shape, d.shape);
  EXPECT_EQ(f.data, (std::vector<float>{0.5f, -1.25f, 2.0f}));
}

// ---------------------------------------------------------------------------
// Rng

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowStaysInRangeAndShuffleIsPermutation) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) ASSERT_LT(rng.below(7), 7u);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

// ---------------------------------------------------------------------------
// Forward oracles

TEST(Ops, MatmulMatchesTripleLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = gen_size(rng, 1, 6), q = gen_size(rng, 1, 6), r = gen_size(rng, 1, 6);
    Tensor<double> a = gen_tensor<double>(rng, {p, q});
    Tensor<double> b = gen_tensor<double>(rng, {q, r});
    Tape<double> tape;
    const Tensor<double>& c = ops::matmul(tape.constant(a), tape.constant(b)).value();
    ASSERT_EQ(c.shape, (Shape{p, r}));
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < q; ++k) acc += a.data[i * q + k] * b.data[k * r + j];
        EXPECT_EQ(c.data[i * r + j], acc);
      }
  }
}

TEST(Ops, MatmulVectorAndMismatch) {
  Tape<double> tape;
  Var<double> a = tape.constant(Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}));
  Var<double> x = tape.constant(Tensor<double>(Shape{2}, {1, 1}));
  EXPECT_EQ(ops::matmul(a, x).value().data, (std::vector<double>{3, 7}));
  Var<double> bad = tape.constant(Tensor<double>(Shape{3}));
  EXPECT_THROW(ops::matmul(a, bad), DimensionError);
}

TEST(Ops, SigmoidScalarOracle) {
  for (double x : {-30.0, -2.0, -0.5, 0.0, 0.5, 2.0, 30.0}) {
    EXPECT_NEAR(ops::sigmoid_scalar(x), 1.0 / (1.0 + std::exp(-x)), 1e-15);
  }
  EXPECT_EQ(ops::sigmoid_scalar(0.0), 0.5);
  EXPECT_TRUE(std::isfinite(ops::sigmoid_scalar(-1000.0)));
  EXPECT_TRUE(std::isfinite(ops::sigmoid_scalar(1000.0)));
}

TEST(Ops, UnaryValues) {
  Tape<double> tape;
  Var<double> x = tape.constant(Tensor<double>(Shape{3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(ops::relu(x).value().data, (std::vector<double>{0.0, 0.0, 2.0}));
  const auto& t = ops::tanh(x).value().data;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(t[i], std::tanh(x.value()[i]), 1e-15);
}

TEST(Ops, SoftmaxUniformAndStable) {
  Tape<double> tape;
  const auto& u = ops::softmax(tape.constant(Tensor<double>(Shape{2}, {0.0, 0.0}))).value().data;
  EXPECT_EQ(u, (std::vector<double>{0.5, 0.5}));
  const auto& big = ops::softmax(tape.constant(Tensor<double>(Shape{2}, {1000.0, 1000.0}))).value().data;
  EXPECT_EQ(big, (std::vector<double>{0.5, 0.5}));
  const auto& s = ops::softmax(tape.constant(Tensor<double>(Shape{3}, {1.0, 2.0, 3.0}))).value().data;
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], std::exp(i + 1.0) / z, 1e-15);
}

TEST(Ops, SoftmaxAlongRows) {
  Tape<double> tape;
  Var<double> x = tape.constant(Tensor<double>(Shape{2, 2}, {0.0, std::log(3.0), 1.0, 1.0}));
  const auto& y = ops::softmax(x, 1).value().data;
  EXPECT_NEAR(y[0], 0.25, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
  EXPECT_NEAR(y[2], 0.5, 1e-15);
  EXPECT_NEAR(y[3], 0.5, 1e-15);
}

TEST(Ops, MaskedSoftmaxZeroesTail) {
  Tape<double> tape;
  const auto& y = ops::masked_softmax(tape.constant(Tensor<double>(Shape{4}, {0.0, 0.0, 9.0, 9.0})), 2).value().data;
  EXPECT_EQ(y, (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
}

TEST(Ops, ConcatSliceRoundTrip) {
  Rng rng(5);
  Tape<double> tape;
  Tensor<double> a = gen_tensor<double>(rng, {2, 3});
  Tensor<double> b = gen_tensor<double>(rng, {2, 4});
  Var<double> c = ops::concat(tape.constant(a), tape.constant(b), 1);
  EXPECT_EQ(c.shape(), (Shape{2, 7}));
  EXPECT_EQ(ops::slice(c, 1, 0, 3).value().data, a.data);
  EXPECT_EQ(ops::slice(c, 1, 3, 7).value().data, b.data);
  Var<double> rows = ops::concat(tape.constant(a), tape.constant(a), 0);
  EXPECT_EQ(rows.shape(), (Shape{4, 3}));
  EXPECT_THROW(ops::concat(tape.constant(a), tape.constant(b), 0), DimensionError);
}

TEST(Ops, ConcatWithEmptyIsIdentity) {
  Tape<double> tape;
  Var<double> a = tape.constant(Tensor<double>(Shape{2}, {1, 2}));
  Var<double> e = tape.constant(Tensor<double>(Shape{0}));
  EXPECT_EQ(ops::concat(a, e).value().data, a.value().data);
  EXPECT_EQ(ops::concat(e, a).value().data, a.value().data);
}

TEST(Ops, GatherRejectsOutOfRangeIds) {
  Tape<double> tape;
  Var<double> table = tape.constant(Tensor<double>(Shape{3, 2}));
  const std::vector<std::size_t> ids{0, 3};
  EXPECT_THROW(ops::gather_rows_as_columns(table, std::span<const std::size_t>(ids)), VocabularyError);
}

TEST(Ops, GatherFrozenRowReadsZero) {
  Tape<double> tape;
  Var<double> table = tape.constant(Tensor<double>(Shape{2, 2}, {7, 8, 1, 2}));
  const std::vector<std::size_t> ids{1, 0};
  const auto& d = ops::gather_rows_as_columns(table, std::span<const std::size_t>(ids), 0).value();
  EXPECT_EQ(d.shape, (Shape{2, 2}));
  EXPECT_EQ(d.data, (std::vector<double>{1, 0, 2, 0}));
}

TEST(Ops, Conv2dMatchesNestedLoops) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = gen_size(rng, 1, 3), o = gen_size(rng, 1, 3), k = gen_size(rng, 1, 3);
    const std::size_t stride = gen_size(rng, 1, 2);
    const std::size_t h = k + gen_size(rng, 0, 5), w = k + gen_size(rng, 0, 5);
    Tensor<double> x = gen_tensor<double>(rng, {c, h, w});
    Tensor<double> ker = gen_tensor<double>(rng, {o, c, k, k});
    Tensor<double> bias = gen_tensor<double>(rng, {o});
    Tape<double> tape;
    const auto& y = ops::conv2d(tape.constant(x), tape.constant(ker), tape.constant(bias), stride).value();
    const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
    ASSERT_EQ(y.shape, (Shape{o, oh, ow}));
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias[f];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t di = 0; di < k; ++di)
              for (std::size_t dj = 0; dj < k; ++dj)
                acc += ker.data[((f * c + ch) * k + di) * k + dj] *
                       x.data[(ch * h + i * stride + di) * w + j * stride + dj];
          EXPECT_NEAR(y.data[(f * oh + i) * ow + j], acc, 1e-12);
        }
  }
}

TEST(Ops, PoolingOracles) {
  Tape<double> tape;
  Var<double> x = tape.constant(Tensor<double>(Shape{1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 6}));
  EXPECT_EQ(ops::maxpool2d(x, 2, 2).value().data, (std::vector<double>{5, 8}));
  EXPECT_EQ(ops::meanpool(x).value().data, (std::vector<double>{29.0 / 8.0}));
}

TEST(Ops, BceScalarOracleAndClamp) {
  Tape<double> tape;
  Var<double> p = tape.constant(Tensor<double>(Shape{2}, {0.8, 0.3}));
  const Tensor<double> y(Shape{2}, {1.0, 0.0});
  EXPECT_NEAR(ops::bce_sum(p, y).value().item(), -std::log(0.8) - std::log(0.7), 1e-15);

  Tensor<double> sat(Shape{1}, {0.0});
  sat.requires_grad = true;
  Tape<double> t2;
  Var<double> loss = ops::bce_sum(t2.parameter(sat), Tensor<double>(Shape{1}, {1.0}));
  EXPECT_NEAR(loss.value().item(), -std::log(1e-7), 1e-9);
  t2.backward(loss);
  EXPECT_EQ((*sat.grad)[0], 0.0);
}

// ---------------------------------------------------------------------------
// Tape

TEST(Tape, SquareGradient) {
  Tensor<double> x(Shape{1}, {3.0});
  x.requires_grad = true;
  Tape<double> tape;
  Var<double> v = tape.parameter(x);
  tape.backward(ops::sum(ops::hadamard(v, v)));
  EXPECT_EQ((*x.grad)[0], 6.0);
}

TEST(Tape, NonScalarLossIsUsageError) {
  Tensor<double> x(Shape{2}, {1.0, 2.0});
  x.requires_grad = true;
  Tape<double> tape;
  EXPECT_THROW(tape.backward(tape.parameter(x)), UsageError);
}

TEST(Tape, UnreachedParameterGetsZeros) {
  Tensor<double> used(Shape{1}, {2.0}), unused(Shape{2}, {1.0, 1.0});
  used.requires_grad = unused.requires_grad = true;
  unused.grad = std::vector<double>{5.0, 5.0};
  Tape<double> tape;
  Var<double> u = tape.parameter(used);
  tape.parameter(unused);
  tape.backward(ops::sum(u));
  EXPECT_EQ(*unused.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Tape, SameTensorBindsOnceAndAccumulates) {
  Tensor<double> x(Shape{1}, {2.0});
  x.requires_grad = true;
  Tape<double> tape;
  Var<double> a = tape.parameter(x), b = tape.parameter(x);
  EXPECT_EQ(a.id(), b.id());
  tape.backward(ops::sum(ops::add(a, b)));
  EXPECT_EQ((*x.grad)[0], 2.0);
}

TEST(Tape, DetachBlocksGradient) {
  Tensor<double> x(Shape{1}, {2.0});
  x.requires_grad = true;
  Tape<double> tape;
  Var<double> v = tape.parameter(x);
  tape.backward(ops::sum(ops::hadamard(v, ops::detach(v))));
  EXPECT_EQ((*x.grad)[0], 2.0);
}

// ---------------------------------------------------------------------------
// grad_check harness

TEST(GradCheck, SquarePasses) {
  Tensor<double> x(Shape{3}, {0.5, -1.0, 2.0});
  x.requires_grad = true;
  auto body = [&](Tape<double>& t) {
    Var<double> v = t.parameter(x);
    return ops::sum(ops::hadamard(v, v));
  };
  auto loss = [&] {
    Tape<double> t;
    return body(t).value().item();
  };
  auto analytic = [&] {
    Tape<double> t;
    t.backward(body(t));
  };
  const std::vector<NamedTensor<double>> params{{"x", &x}};
  const GradCheckReport r = grad_check<double>(loss, analytic, params);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxCrossEntropyPasses) {
  Rng rng(9);
  Tensor<double> logits = gen_tensor<double>(rng, {5});
  logits.requires_grad = true;
  auto body = [&](Tape<double>& t) {
    Var<double> p = ops::softmax(t.parameter(logits));
    return ops::bce_sum(p, Tensor<double>(Shape{5}, {0, 0, 1, 0, 0}));
  };
  auto loss = [&] {
    Tape<double> t;
    return body(t).value().item();
  };
  auto analytic = [&] {
    Tape<double> t;
    t.backward(body(t));
  };
  const std::vector<NamedTensor<double>> params{{"logits", &logits}};
  EXPECT_LT(grad_check<double>(loss, analytic, params).max_rel_error, 1e-7);
}

// A deliberately wrong backward rule must be caught.
TEST(GradCheck, DetectsCorruptedBackward) {
  Tensor<double> x(Shape{2}, {0.7, -0.4});
  x.requires_grad = true;
  auto body = [&](Tape<double>& t) {
    Var<double> v = t.parameter(x);
    Tensor<double> out(Shape{2});
    for (int i = 0; i < 2; ++i) out[i] = std::sin(v.value()[i]);
    const std::size_t vi = v.id();
    Var<double> y = t.record(std::move(out), {vi}, [vi](Tape<double>& tp, std::size_t self) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(vi);
      for (int i = 0; i < 2; ++i) gx[i] += g[i] * 2.0 * std::cos(tp.value(vi)[i]);  // factor 2 is wrong
    });
    return ops::sum(y);
  };
  auto loss = [&] {
    Tape<double> t;
    return body(t).value().item();
  };
  auto analytic = [&] {
    Tape<double> t;
    t.backward(body(t));
  };
  const std::vector<NamedTensor<double>> params{{"x", &x}};
  const GradCheckReport r = grad_check<double>(loss, analytic, params);
  EXPECT_GT(r.max_rel_error, 0.4);
  EXPECT_EQ(r.worst, "x");
  // The step ladder cannot rescue a wrong derivative.
  GradCheckOptions ladder;
  ladder.retry_above = 1e-4;
  ladder.fallback_steps = {1e-6, 1e-7, 1e-4, 1e-3, 1e-2};
  const GradCheckReport again = grad_check<double>(loss, analytic, params, ladder);
  EXPECT_GT(again.max_tensor_rel_error, 0.3);
}

// A kink within the primary step spoils the central difference; a smaller
// step from the ladder recovers it.
TEST(GradCheck, LadderRecoversFromReluKink) {
  Tensor<double> x(Shape{1}, {3e-6});
  x.requires_grad = true;
  auto body = [&](Tape<double>& t) { return ops::sum(ops::relu(t.parameter(x))); };
  auto loss = [&] {
    Tape<double> t;
    return body(t).value().item();
  };
  auto analytic = [&] {
    Tape<double> t;
    t.backward(body(t));
  };
  const std::vector<NamedTensor<double>> params{{"x", &x}};
  GradCheckOptions opt;
  EXPECT_GT(grad_check<double>(loss, analytic, params, opt).max_tensor_rel_error, 0.1);
  opt.retry_above = 1e-4;
  opt.fallback_steps = {1e-6, 1e-7};
  const GradCheckReport r = grad_check<double>(loss, analytic, params, opt);
  EXPECT_LT(r.max_tensor_rel_error, 1e-9);
  EXPECT_EQ(r.entries[0].epsilon, 1e-6);
}

TEST(GradCheck, RelativeErrorFormula) {
  EXPECT_EQ(gradient_relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradient_relative_error(0.0, 1e-9), 0.1);
}

// ---------------------------------------------------------------------------
// Per-op finite differences over random shapes

constexpr int kShapeTrials = 100;
constexpr double kOpTolerance = 1e-6;

TEST(OpGradients, Unary) {
  Rng rng(101);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const Shape s{gen_size(rng, 1, 5), gen_size(rng, 1, 5)};
    for (auto kind : {ops::Elementwise::kTanh, ops::Elementwise::kSigmoid, ops::Elementwise::kRelu}) {
      std::vector<Tensor<double>> in{gen_tensor_off_zero<double>(rng, s)};
      const double err = op_gradient_error(
          [kind](Tape<double>&, std::vector<Var<double>>& v) { return ops::unary(kind, v[0]); }, in, trial);
      ASSERT_LT(err, kOpTolerance) << "trial " << trial;
    }
  }
}

TEST(OpGradients, BinaryWithBroadcast) {
  Rng rng(102);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t d = gen_size(rng, 1, 5), n = gen_size(rng, 1, 5);
    const Shape b_shape = trial % 3 == 0 ? Shape{d, n} : trial % 3 == 1 ? Shape{1} : Shape{n};
    for (auto kind : {ops::Elementwise::kAdd, ops::Elementwise::kSub, ops::Elementwise::kHadamard}) {
      std::vector<Tensor<double>> in{gen_tensor<double>(rng, {d, n}), gen_tensor<double>(rng, b_shape)};
      const double err = op_gradient_error(
          [kind](Tape<double>&, std::vector<Var<double>>& v) { return ops::binary(kind, v[0], v[1]); }, in, trial);
      ASSERT_LT(err, kOpTolerance) << "trial " << trial;
    }
  }
}

TEST(OpGradients, MatmulTransposeReshape) {
  Rng rng(103);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t p = gen_size(rng, 1, 5), q = gen_size(rng, 1, 5), r = gen_size(rng, 1, 5);
    std::vector<Tensor<double>> in{gen_tensor<double>(rng, {p, q}),
                                   trial % 2 ? gen_tensor<double>(rng, {q, r}) : gen_tensor<double>(rng, {q})};
    ASSERT_LT(op_gradient_error([](Tape<double>&, std::vector<Var<double>>& v) { return ops::matmul(v[0], v[1]); },
                                in, trial),
              kOpTolerance);
    std::vector<Tensor<double>> one{gen_tensor<double>(rng, {p, q})};
    ASSERT_LT(op_gradient_error([](Tape<double>&, std::vector<Var<double>>& v) { return ops::transpose(v[0]); },
                                one, trial),
              kOpTolerance);
    ASSERT_LT(op_gradient_error(
                  [p, q](Tape<double>&, std::vector<Var<double>>& v) { return ops::reshape(v[0], Shape{p * q}); },
                  one, trial),
              kOpTolerance);
  }
}

TEST(OpGradients, SoftmaxVariants) {
  Rng rng(104);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t r = gen_size(rng, 1, 5), c = gen_size(rng, 1, 5);
    const std::size_t axis = trial % 2;
    std::vector<Tensor<double>> m{gen_tensor<double>(rng, {r, c}, 2.0)};
    ASSERT_LT(op_gradient_error(
                  [axis](Tape<double>&, std::vector<Var<double>>& v) { return ops::softmax(v[0], axis); }, m, trial),
              kOpTolerance);
    const std::size_t valid = gen_size(rng, 0, c);
    std::vector<Tensor<double>> vec{gen_tensor<double>(rng, {c}, 2.0)};
    ASSERT_LT(op_gradient_error(
                  [valid](Tape<double>&, std::vector<Var<double>>& v) { return ops::masked_softmax(v[0], valid); },
                  vec, trial),
              kOpTolerance);
  }
}

TEST(OpGradients, StructuralOps) {
  Rng rng(105);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t r = gen_size(rng, 1, 4), c = gen_size(rng, 1, 4), c2 = gen_size(rng, 1, 4);
    std::vector<Tensor<double>> two{gen_tensor<double>(rng, {r, c}), gen_tensor<double>(rng, {r, c2})};
    ASSERT_LT(op_gradient_error(
                  [](Tape<double>&, std::vector<Var<double>>& v) { return ops::concat(v[0], v[1], 1); }, two, trial),
              kOpTolerance);
    const std::size_t b = gen_size(rng, 0, c - 1), e = gen_size(rng, b + 1, c);
    std::vector<Tensor<double>> one{gen_tensor<double>(rng, {r, c})};
    ASSERT_LT(op_gradient_error(
                  [b, e](Tape<double>&, std::vector<Var<double>>& v) { return ops::slice(v[0], 1, b, e); }, one,
                  trial),
              kOpTolerance);
    const std::size_t j = gen_size(rng, 0, c - 1);
    ASSERT_LT(op_gradient_error([j](Tape<double>&, std::vector<Var<double>>& v) { return ops::column(v[0], j); },
                                one, trial),
              kOpTolerance);
    std::vector<Tensor<double>> cols{gen_tensor<double>(rng, {r}), gen_tensor<double>(rng, {r}),
                                     gen_tensor<double>(rng, {r})};
    ASSERT_LT(op_gradient_error(
                  [](Tape<double>&, std::vector<Var<double>>& v) {
                    return ops::stack_columns(std::span<const Var<double>>(v));
                  },
                  cols, trial),
              kOpTolerance);
    ASSERT_LT(op_gradient_error([](Tape<double>&, std::vector<Var<double>>& v) { return ops::sum(v[0]); }, one,
                                trial),
              kOpTolerance);
  }
}

TEST(OpGradients, Gather) {
  Rng rng(106);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t vocab = gen_size(rng, 2, 6), d = gen_size(rng, 1, 4), n = gen_size(rng, 1, 6);
    std::vector<std::size_t> ids(n);
    for (auto& id : ids) id = static_cast<std::size_t>(rng.below(vocab));
    std::vector<Tensor<double>> table{gen_tensor<double>(rng, {vocab, d})};
    ASSERT_LT(op_gradient_error(
                  [&ids](Tape<double>&, std::vector<Var<double>>& v) {
                    return ops::gather_rows_as_columns(v[0], std::span<const std::size_t>(ids), 0);
                  },
                  table, trial),
              kOpTolerance);
  }
}

TEST(OpGradients, ConvAndPooling) {
  Rng rng(107);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t c = gen_size(rng, 1, 2), o = gen_size(rng, 1, 2), k = gen_size(rng, 1, 3);
    const std::size_t stride = gen_size(rng, 1, 2);
    const std::size_t h = k + gen_size(rng, 0, 4), w = k + gen_size(rng, 0, 4);
    std::vector<Tensor<double>> in{gen_tensor<double>(rng, {c, h, w}), gen_tensor<double>(rng, {o, c, k, k}),
                                   gen_tensor<double>(rng, {o})};
    ASSERT_LT(op_gradient_error(
                  [stride](Tape<double>&, std::vector<Var<double>>& v) {
                    return ops::conv2d(v[0], v[1], v[2], stride);
                  },
                  in, trial),
              kOpTolerance);
    // Distinct values keep the pooled argmax away from ties.
    Tensor<double> img(Shape{c, 2 + gen_size(rng, 0, 3), 2 + gen_size(rng, 0, 3)});
    std::vector<std::size_t> order(img.numel());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) img.data[i] = 0.1 * static_cast<double>(order[i]);
    std::vector<Tensor<double>> pin{img};
    ASSERT_LT(op_gradient_error(
                  [](Tape<double>&, std::vector<Var<double>>& v) { return ops::maxpool2d(v[0], 2, 2); }, pin, trial),
              kOpTolerance);
    ASSERT_LT(op_gradient_error([](Tape<double>&, std::vector<Var<double>>& v) { return ops::meanpool(v[0]); }, pin,
                                trial),
              kOpTolerance);
  }
}

TEST(OpGradients, BinaryCrossEntropy) {
  Rng rng(108);
  for (int trial = 0; trial < kShapeTrials; ++trial) {
    const std::size_t n = gen_size(rng, 1, 6);
    Tensor<double> p(Shape{n});
    Tensor<double> y(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(0.05, 0.95);
      y[i] = static_cast<double>(rng.below(2));
    }
    std::vector<Tensor<double>> in{p};
    ASSERT_LT(op_gradient_error([&y](Tape<double>&, std::vector<Var<double>>& v) { return ops::bce_sum(v[0], y); },
                                in, trial),
              kOpTolerance);
  }
}

}  // namespace
}  // namespace muvam
