// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numeric>
#include <set>

#include "support.hpp"

namespace kdsr {
namespace {

using num::DenseMatrix;
using num::Parameter;
using testing::check_gradients;
using testing::random_matrix;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto a = DenseMatrix::from_rows({{1.5, -2.0}, {0.25, 4.0}});
  EXPECT_EQ(num::matmul(DenseMatrix::identity(2), a), a);
}

TEST(Matmul, HandArithmetic) {
  const auto a = DenseMatrix::from_rows({{1, 2}, {3, 4}});
  const auto b = DenseMatrix::from_rows({{0}, {1}});
  EXPECT_EQ(num::matmul(a, b), DenseMatrix::from_rows({{2}, {4}}));
}

TEST(Matmul, ZeroLeftFactorGivesZeros) {
  Rng rng(7);
  const auto out = num::matmul(DenseMatrix(2, 3), random_matrix(3, 4, rng));
  EXPECT_EQ(out, DenseMatrix(2, 4));
}

TEST(Matmul, MatchesTripleLoopOnRandomShapes) {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6), n = 1 + rng.below(6);
    const auto a = random_matrix(m, k, rng);
    const auto b = random_matrix(k, n, rng);
    EXPECT_LT(testing::max_abs_diff(num::matmul(a, b), testing::oracle::matmul(a, b)), 1e-12);
    DenseMatrix at(m, n);
    num::matmul_at_acc(num::transpose(a), b, at);
    EXPECT_LT(testing::max_abs_diff(num::matmul(a, b), at), 1e-12);
  }
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  try {
    num::matmul(DenseMatrix(2, 3), DenseMatrix(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::dimension);
  }
}

TEST(Sigmoid, Values) {
  EXPECT_DOUBLE_EQ(num::sigmoid(0.0), 0.5);
  EXPECT_NEAR(num::sigmoid(800.0), 1.0, 1e-11);
  EXPECT_LT(num::sigmoid(800.0), 1.0);
  EXPECT_GT(num::sigmoid(-800.0), 0.0);
  EXPECT_NEAR(num::sigmoid(0.6667), 0.66076, 1e-4);
}

TEST(Sigmoid, SymmetricAroundZero) {
  for (double x : {0.1, 1.0, 3.5, 12.0}) {
    EXPECT_NEAR(num::sigmoid(x) + num::sigmoid(-x), 1.0, 1e-15);
  }
}

TEST(SoftmaxCrossEntropy, ClosedForms) {
  const std::vector<double> four(4, 0.3);
  EXPECT_NEAR(num::softmax_cross_entropy(four, 2), std::log(4.0), 1e-12);
  EXPECT_NEAR(num::softmax_cross_entropy(four, 2), 1.38629, 1e-5);
  const std::vector<double> hundred(100, -1.0);
  EXPECT_NEAR(num::softmax_cross_entropy(hundred, 0), 4.60517, 1e-5);
  std::vector<double> peaked(5, 0.0);
  peaked[3] = 60.0;
  EXPECT_LT(num::softmax_cross_entropy(peaked, 3), 1e-20);
}

TEST(SoftmaxCrossEntropy, StableForHugeLogits) {
  const std::vector<double> logits{1e6, 1e6 - 1.0};
  EXPECT_NEAR(num::softmax_cross_entropy(logits, 1), 1.0 + std::log1p(std::exp(-1.0)), 1e-9);
}

TEST(Pearson, Values) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(num::pearson(a, std::vector<double>{2, 4, 6}), 1.0);
  EXPECT_DOUBLE_EQ(num::pearson(a, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_NEAR(num::pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 4, 3}), 0.8, 1e-9);
}

TEST(Pearson, ConstantInputIsUndefined) {
  try {
    num::pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::undefined_correlation);
  }
}

TEST(Pearson, InvariantUnderAffineMaps) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(30), v(30), w(30);
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = rng.normal();
      v[i] = u[i] + rng.normal();
      w[i] = 3.0 * v[i] - 7.0;
    }
    const double r = num::pearson(u, v);
    EXPECT_LE(std::abs(r), 1.0);
    EXPECT_NEAR(r, num::pearson(u, w), 1e-12);
    EXPECT_NEAR(r, num::pearson(v, u), 1e-15);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter p("p", num::ParamGroup::other, DenseMatrix::from_rows({{1.0, -2.0, 3.0}}));
  num::AdamState s(p);
  const auto before = p.value;
  num::adam_step(p, s, 0.1);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", num::ParamGroup::other, DenseMatrix::from_rows({{1.0, -2.0, 3.0}}));
  p.gradient = DenseMatrix::from_rows({{0.5, -4.0, 1e-3}});
  num::AdamState s(p);
  const auto before = p.value;
  num::adam_step(p, s, 0.01);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sign = p.gradient[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(p.value[i] - before[i], -0.01 * sign, 1e-6);
  }
}

TEST(Adam, RepeatedGradientNeverGrowsStep) {
  Parameter p("p", num::ParamGroup::other, DenseMatrix(1, 4));
  num::AdamState s(p);
  p.gradient = DenseMatrix::from_rows({{0.3, -1.0, 2.0, 1e-4}});
  auto v0 = p.value;
  num::adam_step(p, s, 0.05);
  auto v1 = p.value;
  num::adam_step(p, s, 0.05);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LE(std::abs(p.value[i] - v1[i]), std::abs(v1[i] - v0[i]) + 1e-12);
  }
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesValue) {
  Parameter p("emb.id", num::ParamGroup::embedding, DenseMatrix(1, 2));
  p.gradient[1] = std::nan("");
  num::AdamState s(p);
  try {
    num::adam_step(p, s, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("emb.id"), std::string::npos);
  }
  EXPECT_EQ(p.value, DenseMatrix(1, 2));
  EXPECT_EQ(s.step, 0U);
}

TEST(GradCheck, Square) {
  Parameter x("x", num::ParamGroup::other, DenseMatrix(1, 1, 3.0));
  const auto rep = check_gradients({&x}, [](ad::Tape&, const std::vector<ad::Var>& v) {
    return ad::sum(ad::hadamard(v[0], v[0]));
  });
  EXPECT_DOUBLE_EQ(x.gradient[0], 6.0);
  EXPECT_TRUE(rep.passed);
  x.value[0] = 3.0 + 1e-5;
  const double up = x.value[0] * x.value[0];
  x.value[0] = 3.0 - 1e-5;
  const double down = x.value[0] * x.value[0];
  EXPECT_NEAR((up - down) / 2e-5, 6.0, 1e-6);
}

TEST(GradCheck, SigmoidAtZero) {
  Parameter x("x", num::ParamGroup::other, DenseMatrix(1, 1, 0.0));
  const auto rep = check_gradients({&x}, [](ad::Tape&, const std::vector<ad::Var>& v) {
    return ad::sum(ad::sigmoid(v[0]));
  });
  EXPECT_NEAR(x.gradient[0], 0.25, 1e-6);
  EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, CorruptedGradientFails) {
  Rng rng(3);
  Parameter x("x", num::ParamGroup::other, random_matrix(2, 3, rng));
  auto loss = [&x] {
    double s = 0.0;
    for (double v : x.value.values()) s += std::sin(v);
    return s;
  };
  for (std::size_t i = 0; i < x.value.size(); ++i) x.gradient[i] = 2.0 * std::cos(x.value[i]);
  std::vector<Parameter*> ps{&x};
  EXPECT_FALSE(num::finite_diff_check(loss, ps).passed);
  for (std::size_t i = 0; i < x.value.size(); ++i) x.gradient[i] = std::cos(x.value[i]);
  EXPECT_TRUE(num::finite_diff_check(loss, ps).passed);
}

// Each tape op, composed into a scalar, against central differences.
class TapeOpGradient : public ::testing::TestWithParam<int> {};

TEST_P(TapeOpGradient, MatchesFiniteDifferences) {
  Rng rng = Rng::stream(static_cast<std::uint64_t>(GetParam()), "tape-op");
  const std::size_t r = 2 + rng.below(3), c = 2 + rng.below(3);
  Parameter a("a", num::ParamGroup::other, random_matrix(r, c, rng));
  Parameter b("b", num::ParamGroup::other, random_matrix(r, c, rng));
  Parameter w("w", num::ParamGroup::other, random_matrix(c, c, rng));
  Parameter bias("bias", num::ParamGroup::other, random_matrix(1, c, rng));
  Parameter gain("gain", num::ParamGroup::other, random_matrix(1, c, rng));
  Parameter sq("sq", num::ParamGroup::other, random_matrix(r, r, rng));
  std::vector<std::int64_t> targets;
  for (std::size_t i = 0; i < r; ++i) targets.push_back(static_cast<std::int64_t>(rng.below(c)));
  std::vector<std::uint32_t> gather{0, static_cast<std::uint32_t>(r - 1), 0};
  const auto rep = check_gradients(
      {&a, &b, &w, &bias, &gain, &sq}, [&](ad::Tape&, const std::vector<ad::Var>& v) {
        const ad::Var x = ad::add_row(ad::matmul(v[0], v[2]), v[3]);
        const ad::Var y = ad::hadamard(ad::tanh(x), ad::sigmoid(v[1]));
        const ad::Var z = ad::sub(ad::matmul_bt(y, v[2]), ad::scale(v[1], 0.5));
        const ad::Var n = ad::layer_norm(z, v[4], v[3]);
        const ad::Var g = ad::gather_rows(n, gather);
        const ad::Var cat = ad::concat_cols({ad::slice_cols(n, 0, 1), ad::slice_cols(n, 1, n.value().cols())});
        const ad::Var rows = ad::concat_rows(std::vector<ad::Var>{ad::slice_rows(cat, 0, 1), ad::slice_rows(cat, 1, r)});
        const ad::Var att = ad::matmul(ad::causal_softmax(v[5]), rows);
        const ad::Var xent = ad::softmax_xent_sum(att, targets);
        const ad::Var ab = ad::sum(ad::abs(ad::add(g, ad::transpose(ad::transpose(g)))));
        const ad::Var relu = ad::sum(ad::relu(ad::scale(v[0], 1.0)));
        std::vector<std::pair<ad::Var, double>> terms{{xent, 1.0}, {ab, 0.3}, {relu, 0.7}};
        return ad::weighted_sum(terms);
      });
  EXPECT_TRUE(rep.passed) << rep.worst_parameter << "[" << rep.worst_index << "] rel " << rep.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(Seeds, TapeOpGradient, ::testing::Range(0, 8));

TEST(Tape, UnusedLeafGetsNoGradient) {
  ad::Tape tape;
  DenseMatrix a(1, 2, 1.0), b(1, 2, 1.0);
  const ad::Var va = tape.input(a);
  const ad::Var vb = tape.input(b);
  tape.backward(ad::sum(va));
  EXPECT_NE(tape.grad_if_any(va), nullptr);
  EXPECT_EQ(tape.grad_if_any(vb), nullptr);
}

TEST(Tape, NonRecordingTapeRefusesBackward) {
  ad::Tape tape(false);
  DenseMatrix a(1, 1, 1.0);
  const ad::Var root = ad::sum(tape.input(a));
  EXPECT_THROW(tape.backward(root), Error);
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  Rng a = Rng::stream(1, "data");
  Rng b = Rng::stream(1, "data");
  Rng c = Rng::stream(1, "init");
  Rng d = Rng::stream(2, "data");
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    EXPECT_EQ(va, b.next_u64());
    EXPECT_NE(va, c.next_u64());
    EXPECT_NE(va, d.next_u64());
  }
}

TEST(Rng, ForkDoesNotAdvanceParent) {
  Rng a = Rng::stream(9, "x");
  const auto s = a.state();
  Rng child = a.fork(3);
  EXPECT_EQ(a.state(), s);
  EXPECT_NE(child.next_u64(), a.fork(4).next_u64());
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng rng(42);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7U);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7U);
}

TEST(Rng, RestoreReplaysSequence) {
  Rng a(5, 0);
  a.next_u64();
  const auto s = a.state();
  const auto x = a.next_u64();
  Rng b;
  b.restore(s);
  EXPECT_EQ(b.next_u64(), x);
}

TEST(Parallel, VisitsEachIndexOnce) {
  std::vector<std::atomic<int>> hits(97);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, PropagatesExceptions) {
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 6) fail(ErrorKind::numeric, "boom");
               }),
               Error);
}

}  // namespace
}  // namespace kdsr
