#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "transmatcher/numcore/grad_check.hpp"
#include "transmatcher/numcore/ops.hpp"
#include "transmatcher/numcore/optim.hpp"
#include "transmatcher/numcore/tape.hpp"

using namespace transmatcher::nc;
using T64 = Tensor<double>;

namespace {

T64 random_tensor(Shape shape, Rng& rng, bool grad = false, double lo = -1.0, double hi = 1.0) {
  T64 t(std::move(shape), grad);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

GradCheckReport check(ParameterSet<double>& ps, const std::function<T64()>& f) {
  return grad_check(f, ps, GradCheckOptions{});
}

}  // namespace

TEST(Matmul, IdentityAndPermutation) {
  T64 eye({2, 2}, {1, 0, 0, 1});
  T64 m({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
  T64 p({2, 2}, {0, 1, 1, 0});
  auto q = matmul(eye, p);
  EXPECT_EQ(std::vector<double>(q.data().begin(), q.data().end()), (std::vector<double>{0, 1, 1, 0}));
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a[i * 4 + k] * b[k * 2 + j];
      EXPECT_NEAR(c[i * 2 + j], s, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  T64 a({2, 3});
  T64 b({2, 3});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3] x [2,3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  auto a = softmax(T64({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  auto b = softmax(T64({2}, {1000, 1000}), 0);
  EXPECT_DOUBLE_EQ(b[0], 0.5);
  auto c = softmax(T64({2}, {0.707, 0}), 0);
  const double e = std::exp(0.707);
  EXPECT_NEAR(c[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(c[0], 0.6698, 1e-4);
  EXPECT_NEAR(c[1], 0.3302, 1e-4);
}

TEST(Softmax, SlicesSumToOneOnEveryAxis) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 4, 5}, rng, false, -30, 30);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto s = sum_axis(y, axis);
      for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-9);
    }
  }
}

TEST(MaxReduce, ExamplesAndTies) {
  auto r = max_reduce_argmax(T64({2, 2}, {1, 3, 2, 0}), 1);
  EXPECT_EQ(r.values[0], 3);
  EXPECT_EQ(r.values[1], 2);
  EXPECT_EQ(r.indices.data, (std::vector<std::size_t>{1, 0}));
  auto t = max_reduce_argmax(T64({3}, {5, 5, 5}), 0);
  EXPECT_EQ(t.values[0], 5);
  EXPECT_EQ(t.indices.data[0], 0u);
}

TEST(MaxReduce, LinearScanOracleBothAxes) {
  Rng rng(5);
  auto x = random_tensor({6, 6}, rng);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    auto r = max_reduce_argmax(x, axis);
    for (std::size_t s = 0; s < 6; ++s) {
      std::size_t best = 0;
      double bv = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < 6; ++l) {
        const double v = axis == 1 ? x[s * 6 + l] : x[l * 6 + s];
        if (v > bv) {
          bv = v;
          best = l;
        }
      }
      EXPECT_EQ(r.indices.data[s], best);
      // values equal gather(x, indices) exactly
      const double gathered = axis == 1 ? x[s * 6 + r.indices.data[s]] : x[r.indices.data[s] * 6 + s];
      EXPECT_EQ(r.values[s], gathered);
    }
  }
}

TEST(MaxReduce, GradientRoutesOnlyToArgmax) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64({2, 3}, {1, 5, 2, 7, 0, 3}), kNewGroup);
  Tape<double> tape;
  T64 loss;
  {
    TapeScope<double> s(tape);
    loss = sum(max_reduce_argmax(x, 1).values);
  }
  tape.backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0, 1, 0, 1, 0, 0}));
}

TEST(MaxReduce, EmptySliceRejected) {
  EXPECT_THROW(T64({0}), DimensionError);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(T64({1}, std::vector<double>{0.0}))[0], 0.5);
  auto r = relu(T64({2}, {-1, 2}));
  EXPECT_EQ(r[0], 0);
  EXPECT_EQ(r[1], 2);
  Rng rng(2);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({4, 5}, rng);
  auto m = mul(a, b);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(m[i], a[i] * b[i]);
  auto s = mul(a, T64::scalar(2.0));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s[i], 2.0 * a[i]);
  EXPECT_THROW(add(a, T64({5, 4})), DimensionError);
}

TEST(Elementwise, NonFiniteIsAnError) {
  T64 big({1}, std::vector<double>{std::numeric_limits<double>::max()});
  EXPECT_THROW(add(big, big), NonFiniteError);
}

TEST(BatchNorm, EvalIdentityWithDefaultState) {
  BatchNormState<double> st(3);
  Rng rng(1);
  auto x = random_tensor({4, 3}, rng);
  auto y = batch_norm(x, st, T64::full({3}, 1.0), T64::zeros({3}), false);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(y[i], x[i] / std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats) {
  BatchNormState<double> st(1);
  auto y = batch_norm(T64({2, 1}, {1, 3}), st, T64(), T64(), true);
  // (x - 2)/sqrt(1 + eps)
  EXPECT_NEAR(y[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(y[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(st.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-15);
  // unbiased batch variance of {1,3} is 2
  EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, EvalOutputIndependentOfBatch) {
  BatchNormState<double> st(2);
  st.running_mean.mutable_data()[0] = 0.3;
  st.running_var.mutable_data()[1] = 2.0;
  T64 g({2}, {1.5, -0.5}), b({2}, {0.1, 0.2});
  auto one = batch_norm(T64({1, 2}, {0.4, 0.9}), st, g, b, false);
  auto many = batch_norm(T64({3, 2}, {5, 5, 0.4, 0.9, -2, 7}), st, g, b, false);
  EXPECT_EQ(one[0], many[2]);
  EXPECT_EQ(one[1], many[3]);
}

TEST(BatchNorm, TrainingNeedsTwoSamples) {
  BatchNormState<double> st(2);
  EXPECT_THROW(batch_norm(T64({1, 2}), st, T64(), T64(), true), BatchSizeError);
}

TEST(LayerNorm, Examples) {
  auto c = layer_norm(T64({1, 3}, {4, 4, 4}), T64(), T64());
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
  auto r = layer_norm(T64({1, 2}, {1, 3}), T64(), T64());
  EXPECT_NEAR(r[0], -1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(r[1], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  Rng rng(9);
  auto x = random_tensor({2, 3, 7}, rng);
  EXPECT_EQ(layer_norm(x, T64(), T64()).shape(), x.shape());
}

TEST(Bce, Examples) {
  EXPECT_NEAR(bce_with_logits(T64::scalar(0.0), 1).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce_with_logits(T64::scalar(20.0), 1).item(), 0.0, 1e-8);
  EXPECT_NEAR(bce_with_logits(T64::scalar(-3.0), 0).item(), std::log1p(std::exp(-3.0)), 1e-15);
  EXPECT_NEAR(bce_with_logits(T64::scalar(-3.0), 0).item(), 0.0486, 1e-4);
  EXPECT_NEAR(bce_with_logits(T64::scalar(-800.0), 1).item(), 800.0, 1e-9);
}

TEST(GradCheck, Square) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64::scalar(3.0), kNewGroup);
  auto rep = check(ps, [&] { return mul(x, x); });
  EXPECT_TRUE(rep.passed);
  EXPECT_NEAR(rep.worst.autodiff, 6.0, 1e-12);
  EXPECT_NEAR(rep.worst.numeric, 6.0, 1e-7);
}

TEST(GradCheck, MaxTiePointIsFlaggedAndExcluded) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64({2}, {1.0, 1.0}), kNewGroup);
  auto rep = check(ps, [&] { return max_reduce_argmax(x, 0).values; });
  EXPECT_EQ(rep.kinks, 2u);
  EXPECT_EQ(rep.checked, 0u);
  EXPECT_FALSE(rep.warnings.empty());
}

TEST(GradCheck, RejectsNonScalar) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64({2}, {1.0, 2.0}), kNewGroup);
  EXPECT_THROW(check(ps, [&] { return scale(x, 2.0); }), UsageError);
}

TEST(GradCheck, PrimitiveBackwardsOnRandomInputs) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterSet<double> ps;
    auto a = ps.add("a", random_tensor({3, 4}, rng), kNewGroup);
    auto b = ps.add("b", random_tensor({4, 5}, rng), kNewGroup);
    auto g = ps.add("g", random_tensor({5}, rng, false, 0.5, 1.5), kNewGroup);
    auto be = ps.add("be", random_tensor({5}, rng), kNewGroup);
    auto w = random_tensor({3, 5}, rng);
    auto mm = check(ps, [&] { return sum(mul(matmul(a, b), w)); });
    EXPECT_TRUE(mm.passed) << mm.max_rel_err;
    auto sm = check(ps, [&] { return sum(mul(softmax(matmul(a, b), 1), w)); });
    EXPECT_TRUE(sm.passed) << sm.max_rel_err;
    auto sg = check(ps, [&] { return sum(mul(sigmoid(matmul(a, b)), w)); });
    EXPECT_TRUE(sg.passed) << sg.max_rel_err;
    auto ln = check(ps, [&] { return sum(mul(layer_norm(matmul(a, b), g, be), w)); });
    EXPECT_TRUE(ln.passed) << ln.max_rel_err;
    BatchNormState<double> st(5);
    auto bn_train = check(ps, [&] { return sum(mul(batch_norm(matmul(a, b), st, g, be, true), w)); });
    EXPECT_TRUE(bn_train.passed) << bn_train.max_rel_err;
    auto bn_eval = check(ps, [&] { return sum(mul(batch_norm(matmul(a, b), st, g, be, false), w)); });
    EXPECT_TRUE(bn_eval.passed) << bn_eval.max_rel_err;
  }
}

TEST(GradCheck, ShapeOpsAndLosses) {
  Rng rng(8);
  ParameterSet<double> ps;
  auto x = ps.add("x", random_tensor({2, 3, 4}, rng), kNewGroup);
  auto y = ps.add("y", random_tensor({2, 4, 3}, rng), kNewGroup);
  auto bias = ps.add("bias", random_tensor({3}, rng), kNewGroup);
  const std::vector<std::size_t> idx{1, 0, 1};
  const std::vector<int> labels{1, 0, 0, 1, 1, 0};
  auto w = random_tensor({6}, rng);
  auto rep = check(ps, [&] {
    auto p = bmm(x, y);                                  // [2,3,3]
    auto q = permute(transpose(p), {2, 0, 1});          // [3,2,3]
    auto c = concat(std::vector<T64>{q, reshape(repeat(bias, 3), {3, 1, 3})}, 1);            // [3,3,3]
    auto s = slice(c, 2, 1, 3);                          // [3,3,2]
    auto gth = gather(s, idx);                           // [3,3,2]
    auto m = mean_axis(reshape(gth, {9, 2}), 0);         // [2]
    auto logits = add_bias(reshape(concat(std::vector<T64>{m, m, m}, 0), {2, 3}), bias);
    auto l2 = l2_normalize_rows(logits);
    auto z = reshape(add(l2, scale(logits, 0.5)), {6});
    return sum(mul(bce_with_logits(z, labels), w));
  });
  EXPECT_TRUE(rep.passed) << rep.max_rel_err << " at " << rep.worst.param;
}

TEST(Tape, BackwardTwiceIsAnError) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64::scalar(2.0), kNewGroup);
  Tape<double> tape;
  T64 loss;
  {
    TapeScope<double> s(tape);
    loss = mul(x, x);
  }
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_THROW(tape.backward(loss), UsageError);
}

TEST(Tape, ReplaysInReverseRecordingOrder) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64::scalar(2.0), kNewGroup);
  Tape<double> tape;
  TapeScope<double> s(tape);
  auto y = sigmoid(scale(mul(x, x), 0.5));
  EXPECT_EQ(tape.op_names(), (std::vector<std::string>{"mul", "scale", "sigmoid"}));
}

TEST(Tape, GradientsAccumulateUntilZeroed) {
  ParameterSet<double> ps;
  auto x = ps.add("x", T64::scalar(3.0), kNewGroup);
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    T64 loss;
    {
      TapeScope<double> s(tape);
      loss = scale(x, 2.0);
    }
    tape.backward(loss);
  }
  EXPECT_EQ(x.grad()[0], 4.0);
  zero_grad(ps);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Optim, ClipExamples) {
  ParameterSet<double> ps;
  auto p = ps.add("p", T64({2}), kNewGroup);
  auto g = p.mutable_grad();
  g[0] = 3;
  g[1] = 4;
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-15);
  g[0] = 0.3;
  g[1] = 0.4;
  clip_grad_norm(ps, 1.0);
  EXPECT_EQ(p.grad()[0], 0.3);
  EXPECT_EQ(p.grad()[1], 0.4);
}

TEST(Optim, ClipNeverIncreasesNorm) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterSet<double> ps;
    auto a = ps.add("a", T64({3}), kNewGroup);
    auto b = ps.add("b", T64({2, 2}), kNewGroup);
    const double s = rng.uniform(0.01, 20.0);
    for (auto& v : a.mutable_grad()) v = rng.uniform(-s, s);
    for (auto& v : b.mutable_grad()) v = rng.uniform(-s, s);
    const double before = global_grad_norm(ps);
    const double max_norm = rng.uniform(0.1, 5.0);
    clip_grad_norm(ps, max_norm);
    const double after = global_grad_norm(ps);
    EXPECT_LE(after, before + 1e-12);
    EXPECT_LE(after, max_norm + 1e-9);
  }
}

TEST(Optim, SgdUsesPerGroupRates) {
  ParameterSet<double> ps;
  auto bb = ps.add("backbone.w", T64::scalar(1.0), kBackboneGroup);
  auto nw = ps.add("decoder.w", T64::scalar(1.0), kNewGroup);
  bb.mutable_grad()[0] = 1.0;
  nw.mutable_grad()[0] = 1.0;
  Sgd<double> sgd;
  sgd.step(ps, {{kBackboneGroup, 0.0005}, {kNewGroup, 0.005}});
  EXPECT_DOUBLE_EQ(bb[0], 1.0 - 0.0005);
  EXPECT_DOUBLE_EQ(nw[0], 1.0 - 0.005);
}

TEST(Optim, SgdMissingGradientNamesParameter) {
  ParameterSet<double> ps;
  ps.add("decoder.0.fc1.weight", T64::scalar(1.0), kNewGroup);
  Sgd<double> sgd;
  try {
    sgd.step(ps, {{kNewGroup, 0.1}});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.0.fc1.weight"), std::string::npos);
  }
}

TEST(Determinism, RepeatedPrimitiveChainIsBitIdentical) {
  auto run = [] {
    Rng rng(77);
    auto a = random_tensor({8, 8}, rng);
    auto b = random_tensor({8, 8}, rng);
    auto y = layer_norm(softmax(matmul(a, b), 1), T64(), T64());
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Precision, FloatPathWorks) {
  Tensor<float> a({2, 2}, {1, 2, 3, 4});
  auto s = softmax(matmul(a, a), 1);
  EXPECT_NEAR(s[0] + s[1], 1.0f, 1e-6f);
}
