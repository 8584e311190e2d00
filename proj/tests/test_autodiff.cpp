#include <gtest/gtest.h>

#include <cmath>

#include "idsp/autodiff.hpp"
#include "idsp/random.hpp"

using namespace idsp;

namespace {

Tensor random_tensor(Rng& r, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = r.normal();
  return t;
}

// Values kept away from 0 so relu and max kinks are not probed.
Tensor away_from_zero(Rng& r, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.2, 1.5);
  return t;
}

ParamStore store(std::initializer_list<std::pair<const char*, Tensor>> items) {
  ParamStore p;
  for (const auto& [n, t] : items) p.add(n, t);
  return p;
}

}  // namespace

TEST(Autodiff, MatmulForwardMatchesLoops) {
  Rng r(1);
  const ParamStore p = store({{"A", random_tensor(r, 3, 4)}, {"B", random_tensor(r, 4, 2)}, {"W", random_tensor(r, 2, 4)}});
  Tape t(p);
  const Var c_var = t.matmul(t.param("A"), t.param("B"));
  const Var d_var = t.matmul_nt(t.param("A"), t.param("W"));
  const Tensor& C = t.value(c_var);
  const Tensor& D = t.value(d_var);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double c = 0, d = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        c += p.at("A")(i, k) * p.at("B")(k, j);
        d += p.at("A")(i, k) * p.at("W")(j, k);
      }
      EXPECT_NEAR(C(i, j), c, 1e-14);
      EXPECT_NEAR(D(i, j), d, 1e-14);
    }
  }
}

TEST(Autodiff, StraightLineMlpGradientByHand) {
  // loss = (w2 . relu(W1 x + b1) - y)^2 with hand-derived gradients
  const Tensor x{{0.5, -1.0}};
  const ParamStore p = store({{"W1", Tensor{{1.0, 0.5}, {-0.3, 0.8}}}, {"b1", Tensor{{0.1, 0.2}}}, {"w2", Tensor{{2.0, -1.0}}}});
  const double y = 0.25;
  auto prog = [&](Tape& t) {
    Var h = t.relu(t.add_bias(t.matmul_nt(t.constant(x), t.param("W1")), t.param("b1")));
    Var out = t.matmul_nt(h, t.param("w2"));
    return t.squared_error(out, t.constant(Tensor::scalar(y)));
  };
  const GradResult g = forward_backward(prog, p);
  const double a0 = 1.0 * 0.5 + 0.5 * -1.0 + 0.1;   // 0.1
  const double a1 = -0.3 * 0.5 + 0.8 * -1.0 + 0.2;  // -0.75, inactive
  const double h0 = std::max(a0, 0.0), h1 = std::max(a1, 0.0);
  const double out = 2.0 * h0 - 1.0 * h1;
  const double dout = 2.0 * (out - y);
  EXPECT_NEAR(g.value, (out - y) * (out - y), 1e-15);
  EXPECT_NEAR(g.grads.at("w2")(0, 0), dout * h0, 1e-15);
  EXPECT_NEAR(g.grads.at("w2")(0, 1), dout * h1, 1e-15);
  EXPECT_NEAR(g.grads.at("b1")(0, 0), dout * 2.0, 1e-15);
  EXPECT_NEAR(g.grads.at("b1")(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(g.grads.at("W1")(0, 0), dout * 2.0 * 0.5, 1e-15);
  EXPECT_NEAR(g.grads.at("W1")(0, 1), dout * 2.0 * -1.0, 1e-15);
  EXPECT_NEAR(g.grads.at("W1")(1, 0), 0.0, 1e-15);
}

TEST(Autodiff, GradCheckEveryPrimitive) {
  Rng r(2);
  const ParamStore p = store({{"A", away_from_zero(r, 4, 3)},
                              {"B", away_from_zero(r, 3, 3)},
                              {"C", away_from_zero(r, 4, 3)},
                              {"b", away_from_zero(r, 1, 3)},
                              {"w", away_from_zero(r, 4, 1)},
                              {"s", Tensor{{0.7}, {1.3}, {0.4}, {2.1}}}});
  auto prog = [](Tape& t) {
    Var a = t.param("A"), b = t.param("B"), c = t.param("C");
    Var x = t.add(t.matmul(a, b), t.mul(c, a));             // 4x3
    Var y = t.add_bias(t.matmul_nt(x, b), t.param("b"));    // 4x3
    Var z = t.concat_cols(t.relu(y), t.scale(x, -0.5));     // 4x6
    Var zz = t.concat_rows(z, t.gather_rows(z, {3, 0}));    // 6x6
    Var sc = t.scatter_add_rows(zz, {0, 1, 1, 2, 3, 0}, 4, {0.5, 1.0, 0.25, 1.0, 2.0, 0.5});
    Var rs = t.row_sum(t.scale_rows(sc, t.param("w")));     // 4x1
    Var m = t.segment_max(t.param("s"), {0, 0, 1, 1}, 2);   // 2x1
    Var inv = t.guarded_reciprocal(m, 1e-12);
    Var tail = t.sum(t.mul(t.gather_rows(inv, {0, 0, 1, 1}), rs));
    return t.add(t.mean(t.mul(rs, rs)), tail);
  };
  const GradCheckReport rep = grad_check(prog, p, 1e-6, 1e-6);
  EXPECT_TRUE(rep.passed()) << "max rel error " << rep.max_rel_error;
  EXPECT_EQ(rep.entries.size(), p.total_size());
}

TEST(Autodiff, SegmentMaxEmptySegmentAndTies) {
  const ParamStore p = store({{"x", Tensor{{2.0}, {2.0}, {1.0}}}});
  Tape t(p);
  Var m = t.segment_max(t.param("x"), {0, 0, 2}, 3);
  EXPECT_EQ(t.value(m)[0], 2.0);
  EXPECT_EQ(t.value(m)[1], 0.0);
  EXPECT_EQ(t.value(m)[2], 1.0);
  t.backward(t.sum(m));
  const ParamStore g = t.gradients();
  EXPECT_EQ(g.at("x")[0], 1.0);  // lowest index wins the tie
  EXPECT_EQ(g.at("x")[1], 0.0);
  EXPECT_EQ(g.at("x")[2], 1.0);
}

TEST(Autodiff, GuardedReciprocalBelowEps) {
  const ParamStore p = store({{"x", Tensor{{0.0}, {4.0}}}});
  Tape t(p);
  Var r = t.guarded_reciprocal(t.param("x"), 1e-12);
  EXPECT_EQ(t.value(r)[0], 1e12);
  EXPECT_EQ(t.value(r)[1], 0.25);
  t.backward(t.sum(r));
  const ParamStore g = t.gradients();
  EXPECT_EQ(g.at("x")[0], 0.0);
  EXPECT_DOUBLE_EQ(g.at("x")[1], -1.0 / 16.0);
}

TEST(Autodiff, ShapeMismatchThrows) {
  const ParamStore p = store({{"A", Tensor(2, 3)}, {"B", Tensor(2, 3)}});
  Tape t(p);
  EXPECT_THROW(t.matmul(t.param("A"), t.param("B")), ShapeError);
  EXPECT_THROW(t.gather_rows(t.param("A"), {5}), ShapeError);
  EXPECT_THROW(t.backward(t.param("A")), ShapeError);
}

TEST(Autodiff, NonFiniteValuesThrow) {
  const ParamStore p = store({{"x", Tensor{{0.0}}}});
  Tape t(p);
  Tensor bad(1, 1, std::numeric_limits<double>::infinity());
  EXPECT_THROW(t.constant(bad), NumericError);
  Var big = t.constant(Tensor::scalar(1e300));
  EXPECT_THROW(t.mul(big, big), NumericError);
}

TEST(Autodiff, RepeatedEvaluationIsBitIdentical) {
  Rng r(5);
  const ParamStore p = store({{"A", random_tensor(r, 20, 20)}, {"B", random_tensor(r, 20, 1)}});
  auto prog = [](Tape& t) { return t.sum(t.relu(t.matmul(t.param("A"), t.param("B")))); };
  const GradResult a = forward_backward(prog, p);
  const GradResult b = forward_backward(prog, p);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.grads, b.grads);
}

TEST(Autodiff, GradCheckRefusesLargeStores) {
  ParamStore p;
  p.add("big", Tensor(100, 100));
  EXPECT_THROW(grad_check([](Tape& t) { return t.sum(t.param("big")); }, p), UsageError);
}

TEST(Autodiff, ParamLeafIsShared) {
  const ParamStore p = store({{"w", Tensor{{3.0}}}});
  auto prog = [](Tape& t) { return t.mul(t.param("w"), t.param("w")); };
  const GradResult g = forward_backward(prog, p);
  EXPECT_DOUBLE_EQ(g.grads.at("w")[0], 6.0);
}

TEST(Autodiff, ReluSumExample) {
  const ParamStore p = store({{"x", Tensor{{-1.0, 2.0}}}});
  const GradResult g = forward_backward([](Tape& t) { return t.sum(t.relu(t.param("x"))); }, p);
  EXPECT_EQ(g.value, 2.0);
  EXPECT_EQ(g.grads.at("x")[0], 0.0);
  EXPECT_EQ(g.grads.at("x")[1], 1.0);
}

TEST(Autodiff, LeastSquaresClosedForm) {
  const Tensor x{{0.3}, {-1.2}};
  const Tensor y{{0.5}, {2.0}};
  const ParamStore p = store({{"W", Tensor{{1.0, 2.0}, {-0.5, 0.25}}}, {"unused", Tensor{{7.0}}}});
  const GradResult g = forward_backward(
      [&](Tape& t) { return t.squared_error(t.matmul(t.param("W"), t.constant(x)), t.constant(y)); }, p);
  const Tensor& W = p.at("W");
  for (std::size_t i = 0; i < 2; ++i) {
    const double r = W(i, 0) * x[0] + W(i, 1) * x[1] - y[i];
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(g.grads.at("W")(i, j), 2.0 * r * x[j] / 2.0, 1e-15);
  }
  EXPECT_EQ(g.grads.at("unused")[0], 0.0);
}
