#include <gtest/gtest.h>

#include "../common/scenes.hpp"
#include "nemo/ad/optim.hpp"

using namespace nemo;
using namespace nemo::ad;

namespace {

Tensor scalar(double v) { return Tensor::Constant(1, 1, v); }

Tensor random_tensor(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

/// Each primitive through a loss that touches every output entry with a
/// different weight.
double check_op(const std::function<Var(Tape&, const ParamStore&)>& f, ParamStore store, std::uint64_t seed) {
  Tape probe;
  const Tensor out = f(probe, store).value();
  std::mt19937_64 rng(seed);
  const Tensor w = random_tensor(rng, out.rows(), out.cols());
  const LossBuilder loss = [&](Tape& t, const ParamStore& s) { return sum(f(t, s) * w); };
  return finite_diff_check_all(loss, store, 1e-5).max_rel_error;
}

}  // namespace

TEST(Backward, SquareAtThree) {
  Tape t;
  const Var x = t.variable(scalar(3.0));
  const Var y = x * x;
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 6.0);
}

TEST(Backward, SigmoidAtZero) {
  Tape t;
  const Var x = t.variable(scalar(0.0));
  t.backward(sigmoid(x));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 0.25);
}

TEST(Backward, NonScalarLossThrows) {
  Tape t;
  const Var x = t.variable(Tensor::Ones(2, 1));
  EXPECT_THROW(t.backward(x * 2.0), NonScalarLoss);
}

TEST(Backward, ConstantsGetNoGradient) {
  Tape t;
  const Var c = t.constant(scalar(2.0));
  const Var x = t.variable(scalar(1.0));
  t.backward(c * x);
  EXPECT_EQ(t.grad(c)(0, 0), 0.0);
  EXPECT_EQ(t.grad(x)(0, 0), 2.0);
}

TEST(Backward, ReusedNodesAccumulate) {
  Tape t;
  const Var x = t.variable(scalar(2.0));
  const Var y = x * x + x * 3.0 + x;
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 8.0);
}

TEST(Backward, FrozenParametersReportNoGradient) {
  ParamStore s;
  s.add("a", scalar(1.0));
  s.add("k", scalar(4.0), false);
  Tape t;
  const Var l = t.parameter(s, "a") * t.parameter(s, "k");
  t.backward(l);
  const GradientMap g = t.gradients(s);
  EXPECT_EQ(g.count("k"), 0u);
  EXPECT_EQ(g.at("a")(0, 0), 4.0);
}

TEST(Ops, EveryPrimitivePassesFiniteDifferences) {
  std::mt19937_64 rng(1);
  ParamStore s;
  s.add("A", random_tensor(rng, 4, 3));
  s.add("B", random_tensor(rng, 3, 5));
  s.add("C", random_tensor(rng, 4, 3));
  s.add("row", random_tensor(rng, 1, 3));
  s.add("col", random_tensor(rng, 4, 1));
  s.add("pos", random_tensor(rng, 4, 3, 0.5, 2.0));
  auto p = [](Tape& t, const ParamStore& st, const char* n) { return t.parameter(st, n); };

  const std::vector<std::pair<const char*, std::function<Var(Tape&, const ParamStore&)>>> cases = {
      {"add", [&](Tape& t, const ParamStore& st) { return p(t, st, "A") + p(t, st, "C"); }},
      {"add_row_broadcast", [&](Tape& t, const ParamStore& st) { return p(t, st, "A") + p(t, st, "row"); }},
      {"sub_col_broadcast", [&](Tape& t, const ParamStore& st) { return p(t, st, "col") - p(t, st, "A"); }},
      {"mul", [&](Tape& t, const ParamStore& st) { return p(t, st, "A") * p(t, st, "C"); }},
      {"mul_col", [&](Tape& t, const ParamStore& st) { return p(t, st, "A") * p(t, st, "col"); }},
      {"div", [&](Tape& t, const ParamStore& st) { return p(t, st, "A") / p(t, st, "pos"); }},
      {"div_row", [&](Tape& t, const ParamStore& st) { return p(t, st, "row") / p(t, st, "pos"); }},
      {"matmul", [&](Tape& t, const ParamStore& st) { return matmul(p(t, st, "A"), p(t, st, "B")); }},
      {"sum", [&](Tape& t, const ParamStore& st) { return sum(p(t, st, "A")); }},
      {"mean", [&](Tape& t, const ParamStore& st) { return mean(p(t, st, "A")); }},
      {"row_sums", [&](Tape& t, const ParamStore& st) { return row_sums(p(t, st, "A")); }},
      {"col_sums", [&](Tape& t, const ParamStore& st) { return col_sums(p(t, st, "A")); }},
      {"sigmoid", [&](Tape& t, const ParamStore& st) { return sigmoid(p(t, st, "A") * 3.0); }},
      {"relu", [&](Tape& t, const ParamStore& st) { return relu(p(t, st, "A")); }},
      {"softplus", [&](Tape& t, const ParamStore& st) { return softplus(p(t, st, "A") * 2.0); }},
      {"sqrt", [&](Tape& t, const ParamStore& st) { return sqrt(p(t, st, "pos")); }},
      {"square", [&](Tape& t, const ParamStore& st) { return square(p(t, st, "A")); }},
      {"cross", [&](Tape& t, const ParamStore& st) { return cross_rows(p(t, st, "A"), p(t, st, "C")); }},
      {"normalize", [&](Tape& t, const ParamStore& st) { return normalize_rows(p(t, st, "A"), 1e-8); }},
      {"dot", [&](Tape& t, const ParamStore& st) { return dot_rows(p(t, st, "A"), p(t, st, "C")); }},
      {"concat_cols", [&](Tape& t, const ParamStore& st) { return concat_cols({p(t, st, "A"), p(t, st, "col")}); }},
      {"concat_rows", [&](Tape& t, const ParamStore& st) { return concat_rows({p(t, st, "A"), p(t, st, "row")}); }},
      {"slice_cols", [&](Tape& t, const ParamStore& st) { return slice_cols(p(t, st, "A"), 1, 2); }},
      {"slice_rows", [&](Tape& t, const ParamStore& st) { return slice_rows(p(t, st, "A"), 1, 2); }},
      {"broadcast", [&](Tape& t, const ParamStore& st) { return broadcast_to(p(t, st, "row"), 5, 3); }},
      {"scalar_ops", [&](Tape& t, const ParamStore& st) { return -(p(t, st, "A") * 2.0 + 1.0) / 3.0 - 0.5; }},
  };
  std::uint64_t seed = 100;
  for (const auto& [name, f] : cases) EXPECT_LT(check_op(f, s, seed++), 1e-8) << name;
}

TEST(Ops, ShapeErrors) {
  Tape t;
  const Var a = t.variable(Tensor::Ones(3, 2));
  const Var b = t.variable(Tensor::Ones(2, 3));
  EXPECT_THROW(a + b, ShapeMismatch);
  EXPECT_THROW(matmul(a, a), ShapeMismatch);
  EXPECT_THROW(cross_rows(a, a), ShapeMismatch);
}

TEST(Ops, NormalizeGuardsZeroRows) {
  Tape t;
  EXPECT_THROW(normalize_rows(t.variable(Tensor::Zero(2, 3)), 1e-8), DegenerateRotation);
}

TEST(Ops, GradientLinearity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ParamStore s;
    s.add("x", random_tensor(rng, 3, 3));
    s.add("y", random_tensor(rng, 3, 1));
    const double a = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double b = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto l1 = [](Tape& t, const ParamStore& st) {
      return sum(sigmoid(matmul(t.parameter(st, "x"), t.parameter(st, "y"))));
    };
    auto l2 = [](Tape& t, const ParamStore& st) {
      return mean(square(t.parameter(st, "x") * t.parameter(st, "y")) + softplus(t.parameter(st, "x")));
    };
    const auto g1 = value_and_gradients(l1, s).second;
    const auto g2 = value_and_gradients(l2, s).second;
    const auto gc = value_and_gradients([&](Tape& t, const ParamStore& st) { return l1(t, st) * a + l2(t, st) * b; }, s)
                        .second;
    for (const auto& [name, g] : gc) EXPECT_LT((g - (a * g1.at(name) + b * g2.at(name))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Ops, DeterministicForwardAndBackward) {
  nemo::testing::TinyScene sc = nemo::testing::tiny_scene(3);
  const FitProblem problem(sc.model, sc.observations, sc.config);
  const auto a = problem.value_and_gradients(Stage::Reprojection, sc.params);
  const auto b = problem.value_and_gradients(Stage::Reprojection, sc.params);
  EXPECT_EQ(a.first, b.first);
  for (const auto& [name, g] : a.second) EXPECT_TRUE((g.array() == b.second.at(name).array()).all()) << name;
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  ParamStore s;
  s.add("x", Tensor::Constant(2, 2, 1.5));
  const GradientMap g{{"x", Tensor::Zero(2, 2)}};
  adam_step(s, g, AdamConfig{});
  EXPECT_TRUE((s.value("x").array() == 1.5).all());
  EXPECT_EQ(s.step(), 1);
}

TEST(Adam, FirstStepHasMagnitudeLr) {
  for (double g : {1e-3, 0.5, -7.0, 1e4}) {
    ParamStore s;
    s.add("x", scalar(0.0));
    adam_step(s, {{"x", scalar(g)}}, AdamConfig{0.01});
    const double want = -0.01 * g / (std::abs(g) + 1e-8);
    EXPECT_NEAR(s.value("x")(0, 0), want, 1e-15);
  }
}

TEST(Adam, QuadraticStrictlyDecreases) {
  ParamStore s;
  s.add("x", scalar(1.0));
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    const auto [loss, g] = value_and_gradients([](Tape& t, const ParamStore& st) {
      const Var x = t.parameter(st, "x");
      return x * x;
    }, s);
    adam_step(s, g, AdamConfig{0.1});
    const double now = std::abs(s.value("x")(0, 0));
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Adam, FrozenNeverChanges) {
  ParamStore s;
  s.add("x", scalar(1.0));
  s.add("k", scalar(3.0), false);
  for (int i = 0; i < 5; ++i) adam_step(s, {{"x", scalar(1.0)}}, AdamConfig{0.1});
  EXPECT_EQ(s.value("k")(0, 0), 3.0);
  EXPECT_NE(s.value("x")(0, 0), 1.0);
}

TEST(Adam, ShapeMismatchRejected) {
  ParamStore s;
  s.add("x", Tensor::Zero(2, 1));
  EXPECT_THROW(adam_step(s, {{"x", Tensor::Zero(1, 2)}}, AdamConfig{}), ShapeMismatch);
}

TEST(Adam, ResetClearsMoments) {
  ParamStore s;
  s.add("x", scalar(0.0));
  adam_step(s, {{"x", scalar(3.0)}}, AdamConfig{0.1});
  s.reset_optimizer();
  EXPECT_EQ(s.step(), 0);
  EXPECT_EQ(s.entry("x").m(0, 0), 0.0);
  EXPECT_EQ(s.entry("x").v(0, 0), 0.0);
}

TEST(FiniteDiff, LinearAndQuadratic) {
  std::mt19937_64 rng(2);
  ParamStore s;
  s.add("x", random_tensor(rng, 5, 1));
  const Tensor c = random_tensor(rng, 5, 1);
  EXPECT_LT(finite_diff_check_all([&](Tape& t, const ParamStore& st) { return sum(t.parameter(st, "x") * c); }, s, 1e-5)
                .max_rel_error,
            1e-10);
  EXPECT_LT(finite_diff_check_all(
                [&](Tape& t, const ParamStore& st) { return sum(square(t.parameter(st, "x")) * c + t.parameter(st, "x")); },
                s, 1e-5)
                .max_rel_error,
            1e-8);
}

TEST(FiniteDiff, DetectsWrongGradient) {
  ParamStore s;
  s.add("x", scalar(0.7));
  // The backward closure deliberately doubles the true derivative.
  const LossBuilder broken = [](Tape& t, const ParamStore& st) {
    const Var x = t.parameter(st, "x");
    return t.record(x.value().array().square().matrix(), {x}, [x](Tape& tp, std::size_t self) {
      tp.accumulate(x.id(), (4.0 * tp.value(x.id()).array() * tp.adjoint(self).array()).matrix());
    });
  };
  EXPECT_GT(finite_diff_check_all(broken, s, 1e-5).max_rel_error, 0.4);
}

TEST(FiniteDiff, TinyPipelineLoss) {
  nemo::testing::TinyScene sc = nemo::testing::tiny_scene(1);
  const FitProblem problem(sc.model, sc.observations, sc.config);
  const LossBuilder loss = [&](Tape& t, const ParamStore& st) { return problem.loss(Stage::Reprojection, t, st); };
  EXPECT_LT(finite_diff_check(loss, sc.params, 1e-5, 300, 4).max_rel_error, 1e-4);
}
