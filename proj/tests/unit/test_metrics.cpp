#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "../common/scenes.hpp"
#include "nemo/metrics.hpp"

using namespace nemo;

namespace {

struct Seq {
  JointSequence joints;
  std::vector<Mat3> roots;
};

Seq random_seq(std::mt19937_64& rng, int frames, int joints) {
  Seq s;
  for (int t = 0; t < frames; ++t) {
    s.joints.push_back(nemo::testing::random_points(rng, joints, 1.0));
    s.roots.push_back(random_rotation(rng));
  }
  return s;
}

JointSequence transformed(const JointSequence& seq, const Mat3& r, const Vec3& t) {
  JointSequence out;
  for (const auto& f : seq) out.push_back((f * r.transpose()).rowwise() + t.transpose());
  return out;
}

// Distances between root-local coordinates; rotations are isometries so this
// equals the aligned error without building the aligned points.
double mpjpe_oracle(const Seq& pred, const Seq& gt) {
  double acc = 0.0;
  for (std::size_t t = 0; t < pred.joints.size(); ++t) {
    double frame = 0.0;
    for (Eigen::Index j = 0; j < pred.joints[t].rows(); ++j) {
      const Vec3 lp = pred.roots[t].transpose() * (pred.joints[t].row(j) - pred.joints[t].row(0)).transpose();
      const Vec3 lg = gt.roots[t].transpose() * (gt.joints[t].row(j) - gt.joints[t].row(0)).transpose();
      frame += (lp - lg).norm();
    }
    acc += frame / pred.joints[t].rows();
  }
  return 1000.0 * acc / pred.joints.size();
}

double global_oracle(const JointSequence& pred, const JointSequence& gt) {
  Eigen::Index n = 0;
  for (const auto& f : pred) n += f.rows();
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  Eigen::Index i = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (Eigen::Index j = 0; j < pred[t].rows(); ++j, ++i) {
      src.col(i) = pred[t].row(j).transpose();
      dst.col(i) = gt[t].row(j).transpose();
    }
  }
  const Eigen::Matrix4d tf = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3Xd moved = (tf.topLeftCorner<3, 3>() * src).colwise() + tf.topRightCorner<3, 1>();
  return 1000.0 * (moved - dst).colwise().norm().mean();
}

PixelSequence random_pixels(std::mt19937_64& rng, int frames, int keypoints) {
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  PixelSequence out;
  for (int t = 0; t < frames; ++t) {
    Points2 p(keypoints, 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
    out.push_back(p);
  }
  return out;
}

Mask random_mask(std::mt19937_64& rng, int frames, int keypoints) {
  std::bernoulli_distribution b(0.6);
  Mask m(frames, keypoints);
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < keypoints; ++k) m(t, k) = b(rng);
  }
  m(0, 0) = true;
  return m;
}

// One joint moving along x so that frame t+2 has the given speed.
JointSequence with_speeds(const std::vector<double>& speeds, double fps) {
  JointSequence out{Points3::Zero(2, 3)};
  for (double s : speeds) {
    Points3 next = out.back();
    next(0, 0) += s / fps;
    out.push_back(next);
  }
  return out;
}

}  // namespace

TEST(Mpjpe, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  const Seq s = random_seq(rng, 5, 13);
  EXPECT_LT(mpjpe(s.joints, s.joints, s.roots, s.roots), 1e-9);
}

TEST(Mpjpe, RootTranslationCancels) {
  std::mt19937_64 rng(2);
  const Seq gt = random_seq(rng, 4, 13);
  const JointSequence pred = transformed(gt.joints, Mat3::Identity(), Vec3(1.0, 0.0, 0.0));
  EXPECT_LT(mpjpe(pred, gt.joints, gt.roots, gt.roots), 1e-9);
}

TEST(Mpjpe, OneWristOffByTenMillimeters) {
  std::mt19937_64 rng(3);
  const Seq gt = random_seq(rng, 6, 13);
  JointSequence pred = gt.joints;
  for (auto& f : pred) f(10, 1) += 0.010;
  EXPECT_NEAR(mpjpe(pred, gt.joints, gt.roots, gt.roots), 10.0 / 13.0, 1e-9);
}

TEST(Mpjpe, InvariantToRigidMotionOfPrediction) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Seq pred = random_seq(rng, 3, 8);
    const Seq gt = random_seq(rng, 3, 8);
    const Mat3 r = random_rotation(rng);
    const Vec3 t = nemo::testing::random_points(rng, 1, 3.0).row(0).transpose();
    Seq moved{transformed(pred.joints, r, t), {}};
    for (const auto& root : pred.roots) moved.roots.push_back(r * root);
    EXPECT_NEAR(mpjpe(moved.joints, gt.joints, moved.roots, gt.roots), mpjpe(pred.joints, gt.joints, pred.roots, gt.roots),
                1e-9);
  }
}

TEST(Mpjpe, MatchesRootLocalOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Seq pred = random_seq(rng, 4, 10);
    const Seq gt = random_seq(rng, 4, 10);
    EXPECT_NEAR(mpjpe(pred.joints, gt.joints, pred.roots, gt.roots), mpjpe_oracle(pred, gt), 1e-9);
  }
}

TEST(Mpjpe, ShapeMismatch) {
  std::mt19937_64 rng(6);
  const Seq a = random_seq(rng, 3, 5);
  const Seq b = random_seq(rng, 4, 5);
  const Seq c = random_seq(rng, 3, 6);
  EXPECT_THROW(mpjpe(a.joints, b.joints, a.roots, b.roots), ShapeMismatch);
  EXPECT_THROW(mpjpe(a.joints, c.joints, a.roots, c.roots), ShapeMismatch);
}

TEST(GlobalMpjpe, RigidCopyIsZero) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Seq gt = random_seq(rng, 6, 13);
    const JointSequence pred = transformed(gt.joints, random_rotation(rng), Vec3(0.5, -2.0, 3.0));
    EXPECT_LT(global_mpjpe(pred, gt.joints), 1e-9);
  }
}

TEST(GlobalMpjpe, ScaledCopyIsPenalized) {
  std::mt19937_64 rng(8);
  const Seq gt = random_seq(rng, 4, 13);
  const Points3 all = stack(gt.joints);
  const Eigen::RowVector3d c = all.colwise().mean();
  JointSequence pred;
  for (const auto& f : gt.joints) pred.push_back(((f.rowwise() - c) * 1.1).rowwise() + c);
  EXPECT_GT(global_mpjpe(pred, gt.joints), 1.0);
}

TEST(GlobalMpjpe, MatchesUmeyamaOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const Seq gt = random_seq(rng, 8, 13);
    // Drifting root plus per-joint noise.
    JointSequence pred;
    for (std::size_t t = 0; t < gt.joints.size(); ++t) {
      Points3 f = gt.joints[t] + 0.05 * nemo::testing::random_points(rng, 13);
      f.rowwise() += Eigen::RowVector3d(0.03 * t, 0.0, -0.02 * t);
      pred.push_back(f);
    }
    pred = transformed(pred, random_rotation(rng), Vec3(1, 2, 3));
    EXPECT_NEAR(global_mpjpe(pred, gt.joints), global_oracle(pred, gt.joints), 1e-9);
  }
}

TEST(GlobalMpjpe, SameRigidMotionOnBothSides) {
  std::mt19937_64 rng(10);
  const Seq a = random_seq(rng, 5, 9);
  const Seq b = random_seq(rng, 5, 9);
  const Mat3 r = random_rotation(rng);
  const Vec3 t(0.2, 0.4, -1.0);
  EXPECT_NEAR(global_mpjpe(transformed(a.joints, r, t), transformed(b.joints, r, t)), global_mpjpe(a.joints, b.joints),
              1e-9);
}

TEST(Recon2d, Examples) {
  std::mt19937_64 rng(11);
  const PixelSequence gt = random_pixels(rng, 3, 5);
  const Mask all = Mask::Constant(3, 5, true);
  EXPECT_EQ(recon2d(gt, gt, all), 0.0);
  Mask one = Mask::Constant(3, 5, false);
  one(1, 2) = true;
  PixelSequence pred = gt;
  pred[1].row(2) += Eigen::RowVector2d(3, 4);
  EXPECT_NEAR(recon2d(pred, gt, one), 5.0, 1e-12);
  EXPECT_THROW(recon2d(pred, gt, Mask::Constant(3, 5, false)), EmptyMask);
}

TEST(Recon2d, MatchesLoopOracle) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const PixelSequence a = random_pixels(rng, 4, 13), b = random_pixels(rng, 4, 13);
    const Mask m = random_mask(rng, 4, 13);
    double acc = 0.0;
    int count = 0;
    for (int t = 0; t < 4; ++t) {
      for (int k = 0; k < 13; ++k) {
        if (!m(t, k)) continue;
        acc += std::hypot(a[t](k, 0) - b[t](k, 0), a[t](k, 1) - b[t](k, 1));
        ++count;
      }
    }
    EXPECT_NEAR(recon2d(a, b, m), acc / count, 1e-9);
  }
}

TEST(Pck, Examples) {
  std::mt19937_64 rng(13);
  const PixelSequence gt = random_pixels(rng, 2, 4);
  const Mask all = Mask::Constant(2, 4, true);
  EXPECT_EQ(pck(gt, gt, 200.0, all), 1.0);

  PixelSequence edge = gt;
  for (auto& f : edge) f.col(0).array() += 20.0;  // exactly 0.1 * 200
  EXPECT_EQ(pck(edge, gt, 200.0, all), 1.0);

  PixelSequence half = gt;
  for (auto& f : half) f.topRows(2).array() += 100.0;
  EXPECT_EQ(pck(half, gt, 200.0, all), 0.5);

  EXPECT_THROW(pck(gt, gt, 200.0, Mask::Constant(2, 4, false)), EmptyMask);
  EXPECT_THROW(pck(gt, gt, 0.0, all), ShapeMismatch);
}

TEST(Pck, BoundingBoxIsLongestSide) {
  const Points2 p = (Points2(3, 2) << 0, 0, 40, 10, 15, 25).finished();
  EXPECT_EQ(bbox_size(p), 40.0);
}

TEST(DynamicRange, StaticMotionHasNone) {
  std::mt19937_64 rng(14);
  const Points3 f = nemo::testing::random_points(rng, 13);
  EXPECT_FALSE(dynamic_range(JointSequence(10, f), 30.0).has_value());
}

TEST(DynamicRange, FirstAndLastQualifyingFrames) {
  // Frames 2..6 carry speeds 0.5, 2.5, 1.0, 3.0, 0.1; frames 3 and 5 exceed
  // the threshold, and frame 4 in between is kept.
  const auto r = dynamic_range(with_speeds({0.5, 2.5, 1.0, 3.0, 0.1}, 30.0), 30.0);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(*r, FrameInterval(3, 5));
}

TEST(DynamicRange, ThresholdIsStrict) {
  EXPECT_FALSE(dynamic_range(with_speeds({2.0, 2.0, 2.0}, 25.0), 25.0).has_value());
  EXPECT_TRUE(dynamic_range(with_speeds({2.0, 2.001, 2.0}, 25.0), 25.0).has_value());
}

TEST(DynamicRange, TranslationInvariant) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    JointSequence seq;
    Points3 f = nemo::testing::random_points(rng, 5);
    for (int t = 0; t < 12; ++t) {
      f += 0.1 * nemo::testing::random_points(rng, 5);
      seq.push_back(f);
    }
    const auto a = dynamic_range(seq, 30.0);
    const auto b = dynamic_range(transformed(seq, Mat3::Identity(), Vec3(10.0, -3.0, 7.0)), 30.0);
    EXPECT_EQ(a, b);
  }
  EXPECT_THROW(dynamic_range(JointSequence(1, Points3::Zero(2, 3)), 30.0), ShapeMismatch);
}

TEST(Evaluate, PerfectPredictionAndOptionalMesh) {
  const BodyModel model = default_humanoid();
  std::mt19937_64 rng(16);
  EvalInput in;
  in.id = "a";
  for (int t = 0; t < 6; ++t) in.gt_poses.push_back(nemo::testing::random_pose(rng, model.joints, 0.3, 0.2));
  in.pred_poses = in.gt_poses;
  in.gt_camera = in.pred_camera = Camera::default_placement(CameraIntrinsics{}, 1000, 1000);
  in.visible = Mask::Constant(6, model.keypoints, true);
  const EvalReport r = evaluate(model, {in});
  EXPECT_NEAR(r.mean.mpjpe, 0.0, 1e-9);
  EXPECT_NEAR(r.mean.global_mpjpe, 0.0, 1e-6);
  ASSERT_TRUE(r.mean.mpvpe.has_value());
  EXPECT_NEAR(*r.mean.mpvpe, 0.0, 1e-9);
  EXPECT_EQ(*r.mean.pck, 1.0);
  EXPECT_EQ(*r.mean.recon2d, 0.0);

  BodyModel bare = model;
  bare.mesh.reset();
  const EvalReport b = evaluate(bare, {in});
  EXPECT_FALSE(b.mean.mpvpe.has_value());
  EXPECT_FALSE(b.mean.global_mpvpe.has_value());
}

TEST(Evaluate, MeansOverInstances) {
  const BodyModel model = default_humanoid();
  std::mt19937_64 rng(17);
  std::vector<EvalInput> inputs;
  for (int n = 0; n < 3; ++n) {
    EvalInput in;
    in.id = "i" + std::to_string(n);
    for (int t = 0; t < 5; ++t) {
      in.gt_poses.push_back(nemo::testing::random_pose(rng, model.joints, 0.3, 0.2));
      in.pred_poses.push_back(nemo::testing::random_pose(rng, model.joints, 0.3, 0.2));
    }
    in.gt_camera = in.pred_camera = Camera::default_placement(CameraIntrinsics{}, 1000, 1000);
    in.visible = Mask::Constant(5, model.keypoints, true);
    inputs.push_back(in);
  }
  const EvalReport r = evaluate(model, inputs);
  double m = 0.0, g = 0.0;
  for (const auto& i : r.instances) {
    m += i.full.mpjpe;
    g += i.full.global_mpjpe;
    EXPECT_GE(*i.full.pck, 0.0);
    EXPECT_LE(*i.full.pck, 1.0);
    EXPECT_EQ(i.frame_mpjpe.size(), 5u);
  }
  EXPECT_NEAR(r.mean.mpjpe, m / 3, 1e-12);
  EXPECT_NEAR(r.mean.global_mpjpe, g / 3, 1e-12);
  // Random poses at 30 fps move faster than 2 m/s.
  ASSERT_TRUE(r.instances[0].dynamic_range.has_value());
  EXPECT_LE(r.instances[0].dynamic_range->first, r.instances[0].dynamic_range->second);
}

TEST(Constants, ProtocolValues) {
  EXPECT_EQ(kPckFraction, 0.1);
  EXPECT_EQ(kDynamicSpeed, 2.0);
}
