#include <gtest/gtest.h>

#include "../common/scenes.hpp"
#include "nemo/ad/optim.hpp"
#include "nemo/field.hpp"

using namespace nemo;

namespace {

FieldConfig small_config(int joints = 6) {
  FieldConfig c;
  c.joints = joints;
  c.hidden_units = 16;
  c.code_dim = 3;
  c.phase_sigmoids = 10;
  c.output_init_scale = 0.1;
  return c;
}

ad::ParamStore make_store(const FieldConfig& c, int instances = 1, std::uint64_t seed = 0) {
  ad::ParamStore s;
  std::mt19937_64 rng(seed);
  init_field(s, c, rng);
  for (int n = 0; n < instances; ++n) init_instance(s, n, c, rng);
  return s;
}

void zero_field(ad::ParamStore& s) {
  for (auto& e : s.entries()) {
    if (e.name.rfind("field/", 0) == 0) e.value.setZero();
  }
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

PhaseNetParams random_phase(std::mt19937_64& rng, int k) {
  std::uniform_real_distribution<double> a(-5.0, 40.0), b(-0.5, 1.5);
  PhaseNetParams p{Eigen::RowVectorXd(k), Eigen::RowVectorXd(k)};
  for (int i = 0; i < k; ++i) {
    p.a(i) = a(rng);
    p.b(i) = b(rng);
  }
  p.a(0) = std::abs(p.a(0)) + 1.0;  // at least one live sigmoid
  return p;
}

}  // namespace

TEST(Phase, EndpointsAreExact) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const PhaseNetParams p = random_phase(rng, 1 + i % 20);
    EXPECT_LT(std::abs(phase_eval(p, 0.0)), 1e-12);
    EXPECT_LT(std::abs(phase_eval(p, 1.0) - 1.0), 1e-12);
  }
}

TEST(Phase, SingleSigmoidClosedForm) {
  const PhaseNetParams p{Eigen::RowVectorXd::Constant(1, 4.0), Eigen::RowVectorXd::Constant(1, 0.5)};
  const double want = (sig(0.0) - sig(-2.0)) / (sig(2.0) - sig(-2.0));
  EXPECT_NEAR(phase_eval(p, 0.5), want, 1e-15);
  EXPECT_NEAR(phase_eval(p, 0.5), 0.5, 1e-15);
}

TEST(Phase, MonotoneOnGrid) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const PhaseNetParams p = random_phase(rng, 1 + i % 30);
    double prev = phase_eval(p, 0.0);
    for (int g = 1; g <= 100; ++g) {
      const double cur = phase_eval(p, g / 100.0);
      EXPECT_LE(prev, cur + 1e-12);
      prev = cur;
    }
  }
}

TEST(Phase, DegenerateWhenAllSlopesDead) {
  const PhaseNetParams p{Eigen::RowVectorXd::Constant(3, -1.0), Eigen::RowVectorXd::Constant(3, 0.5)};
  EXPECT_THROW(phase_eval(p, 0.5), DegeneratePhase);
  ad::Tape t;
  EXPECT_THROW(phase_curve(t.constant(p.a), t.constant(p.b), Eigen::VectorXd::LinSpaced(5, 0, 1)), DegeneratePhase);
}

TEST(Phase, CurveMatchesPlainEvaluation) {
  std::mt19937_64 rng(3);
  const PhaseNetParams p = random_phase(rng, 12);
  const Eigen::VectorXd times = normalized_times(17, TimeConvention::TOverT);
  ad::Tape t;
  const ad::Tensor phi = phase_curve(t.constant(p.a), t.constant(p.b), times).value();
  for (int i = 0; i < times.size(); ++i) EXPECT_NEAR(phi(i, 0), phase_eval(p, times(i)), 1e-14);
}

TEST(Phase, InitializationRanges) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 3);
  for (int n = 0; n < 3; ++n) {
    const PhaseNetParams p = phase_params(s, n);
    EXPECT_GE(p.a.minCoeff(), 5.0);
    EXPECT_LE(p.a.maxCoeff(), 15.0);
    EXPECT_GE(p.b.minCoeff(), 0.0);
    EXPECT_LE(p.b.maxCoeff(), 1.0);
  }
}

TEST(Times, Conventions) {
  const Eigen::VectorXd a = normalized_times(4, TimeConvention::TOverT);
  const Eigen::VectorXd b = normalized_times(4, TimeConvention::ZeroBased);
  EXPECT_EQ(a, (Eigen::VectorXd(4) << 0.25, 0.5, 0.75, 1.0).finished());
  EXPECT_NEAR((b - Eigen::VectorXd::LinSpaced(4, 0.0, 1.0)).norm(), 0.0, 1e-15);
}

TEST(Field, ZeroWeightsGiveRestPose) {
  const FieldConfig c = small_config();
  ad::ParamStore s = make_store(c);
  zero_field(s);
  const Pose p = field_eval(s, c, 0.37, Eigen::VectorXd::Constant(c.code_dim, 0.4));
  for (const auto& r : p.rotations) EXPECT_EQ((rot6d_to_matrix(r) - Mat3::Identity()).norm(), 0.0);
  EXPECT_EQ(p.root_trans, Vec3::Zero());

  const MotionSequence m = motion_sample(s, c, 0, 7);
  ASSERT_EQ(m.frames(), 7);
  for (const auto& q : m.poses) EXPECT_EQ(q.to_vector(), Pose::identity(c.joints).to_vector());
}

TEST(Field, TranslationBlockIsSeparate) {
  const FieldConfig c = small_config();
  ad::ParamStore s = make_store(c, 1, 4);
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(c.code_dim, 0.1);
  const Pose before = field_eval(s, c, 0.6, z);
  s.mutable_value(pname::trans_head_b)(0, 1) += 0.5;
  s.mutable_value(pname::trans_head_w)(3, 2) -= 0.2;
  const Pose after = field_eval(s, c, 0.6, z);
  EXPECT_EQ(before.to_vector().head(6 * c.joints), after.to_vector().head(6 * c.joints));
  EXPECT_NE(before.root_trans, after.root_trans);
}

TEST(Field, SeparateTranslationNetworkToo) {
  FieldConfig c = small_config();
  c.separate_translation_net = true;
  ad::ParamStore s = make_store(c, 1, 5);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(c.code_dim);
  const Pose before = field_eval(s, c, 0.2, z);
  for (const auto& name : translation_params(c)) s.mutable_value(name).array() += 0.05;
  const Pose after = field_eval(s, c, 0.2, z);
  EXPECT_EQ(before.to_vector().head(6 * c.joints), after.to_vector().head(6 * c.joints));
  EXPECT_NE(before.root_trans, after.root_trans);
}

TEST(Field, DeterministicEvaluation) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 1, 6);
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(c.code_dim, -0.1, 0.1);
  EXPECT_EQ(field_eval(s, c, 0.3, z).to_vector(), field_eval(s, c, 0.3, z).to_vector());
}

TEST(Field, ContinuousInCode) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 1, 7);
  const Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(c.code_dim, -0.1, 0.1);
  const Eigen::VectorXd d = Eigen::VectorXd::Constant(c.code_dim, 1e-6);
  EXPECT_LT((field_eval(s, c, 0.5, z).to_vector() - field_eval(s, c, 0.5, z + d).to_vector()).norm(), 1e-4);
}

TEST(Field, BatchMatchesSingleEvaluation) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 1, 8);
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(c.code_dim, -0.05);
  const Eigen::VectorXd phi = Eigen::VectorXd::LinSpaced(9, 0.0, 1.0);
  const auto batch = field_eval_batch(s, c, phi, z);
  for (int i = 0; i < phi.size(); ++i) {
    EXPECT_LT((batch[i].to_vector() - field_eval(s, c, phi(i), z).to_vector()).norm(), 1e-13);
  }
}

TEST(MotionSample, LastPhaseIsOneForAnyLength) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 1, 9);
  const MotionSequence m2 = motion_sample(s, c, 0, 2);
  const MotionSequence m4 = motion_sample(s, c, 0, 4);
  EXPECT_NEAR(m2.phases.back(), 1.0, 1e-12);
  EXPECT_NEAR(m4.phases.back(), 1.0, 1e-12);
  EXPECT_LT((m2.poses.back().to_vector() - m4.poses.back().to_vector()).norm(), 1e-12);
  EXPECT_GT(m4.phases.front(), 0.0);
  for (int t = 1; t < 4; ++t) EXPECT_LE(m4.phases[t - 1], m4.phases[t]);
  EXPECT_THROW(motion_sample(s, c, 0, 1), DimensionMismatch);
}

TEST(MotionSample, AdjacentFramesBoundedByLipschitzEstimate) {
  const FieldConfig c = small_config();
  const ad::ParamStore s = make_store(c, 1, 10);
  const MotionSequence m = motion_sample(s, c, 0, 50);
  // |d out / d phi| <= |W0[phi row]| * prod |W_i| * |[W_rot W_trans]| since
  // the activation is 1-Lipschitz.
  double lip = s.value(pname::layer_w(0)).row(0).norm();
  for (int i = 1; i < c.hidden_layers; ++i) lip *= s.value(pname::layer_w(i)).operatorNorm();
  Eigen::MatrixXd head(c.hidden_units, c.output_rot_dim() + 3);
  head << s.value(pname::rot_head_w), s.value(pname::trans_head_w);
  lip *= head.operatorNorm();
  double max_gap = 0.0;
  for (int t = 1; t < 50; ++t) max_gap = std::max(max_gap, m.phases[t] - m.phases[t - 1]);
  for (int t = 1; t < 50; ++t) {
    const double diff = (m.poses[t].to_vector() - m.poses[t - 1].to_vector()).norm();
    EXPECT_LE(diff, lip * max_gap * (1 + 1e-12));
  }
}

TEST(Field, GradientsPassFiniteDifferences) {
  for (bool separate : {false, true}) {
    FieldConfig c = small_config(3);
    c.separate_translation_net = separate;
    c.softplus_beta = 1.0;  // plain softplus; the sharp default is covered by the whole-loss checks
    ad::ParamStore s = make_store(c, 1, 11);
    std::mt19937_64 rng(12);
    const ad::Tensor w = Eigen::MatrixXd::Random(6, c.output_rot_dim() + 3);
    const ad::LossBuilder loss = [&](ad::Tape& t, const ad::ParamStore& st) {
      const InstanceMotion m = instance_motion(t, st, c, 0, 6);
      return ad::sum(ad::concat_cols({m.out.rot6d, m.out.trans}) * w) + ad::sum(ad::square(m.phases));
    };
    const auto res = ad::finite_diff_check_all(loss, s, 1e-4);  // above the round-off floor of the loss
    EXPECT_LT(res.max_rel_error, 1e-5) << res.worst_param << "[" << res.worst_index << "]";
  }
}

TEST(Field, ReluOptionRuns) {
  FieldConfig c = small_config();
  c.activation = Activation::Relu;
  const ad::ParamStore s = make_store(c, 1, 13);
  const MotionSequence m = motion_sample(s, c, 0, 5);
  EXPECT_EQ(m.frames(), 5);
}
