#pragma once

// Small randomized fixtures shared by the unit and acceptance tests.

#include <random>
#include <vector>

#include "nemo/pipeline.hpp"

namespace nemo::testing {

/// J-joint tree: a spine of three joints with two 1-3 joint limbs off it.
inline BodyModel tiny_model(int joints = 6, int keypoints = 4) {
  BodyModel m;
  m.joints = joints;
  m.parents = {-1};
  m.rest_offsets = Points3::Zero(joints, 3);
  for (int j = 1; j < joints; ++j) {
    const int parent = j < 3 ? j - 1 : (j % 2 ? 1 : j - 2 >= 3 ? j - 2 : 2);
    m.parents.push_back(parent);
    m.rest_offsets.row(j) << 0.15 * ((j % 3) - 1), 0.3 + 0.05 * j, 0.04 * (j % 2);
  }
  m.keypoints = keypoints;
  for (int k = 0; k < keypoints; ++k) {
    m.keypoint_regressor.push_back({k, joints - 1 - k % joints, 0.7});
    m.keypoint_regressor.push_back({k, (k * 2) % joints, 0.3});
  }
  m.validate();
  return m;
}

inline Points3 random_points(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Points3 p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

inline Rot6D random_rot6d(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Rot6D r;
  r.a1 = Vec3(n(rng), n(rng), n(rng));
  r.a2 = Vec3(n(rng), n(rng), n(rng));
  return r;
}

inline Pose random_pose(std::mt19937_64& rng, int joints, double angle = 0.8, double trans = 0.5) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose p = Pose::identity(joints);
  for (auto& r : p.rotations) r = matrix_to_rot6d(axis_angle_to_matrix(Vec3(u(rng), u(rng), u(rng)) * angle));
  p.root_trans = Vec3(u(rng), u(rng), u(rng)) * trans;
  return p;
}

struct TinyScene {
  BodyModel model;
  std::vector<Observation> observations;
  FitConfig config;
  ad::ParamStore params;
};

/// Random fitting problem with learnable cameras whose parameters sit away
/// from the optimum (so every gradient is generic).
inline TinyScene tiny_scene(std::uint64_t seed, int instances = 2, int frames = 5, int joints = 6, int keypoints = 4,
                            int hidden = 16, int code_dim = 2) {
  std::mt19937_64 rng(seed);
  TinyScene s;
  s.model = tiny_model(joints, keypoints);
  FitConfig& c = s.config;
  c.seed = seed;
  c.field.joints = joints;
  c.field.hidden_units = hidden;
  c.field.hidden_layers = 3;
  c.field.code_dim = code_dim;
  c.field.phase_sigmoids = 6;
  c.field.output_init_scale = 0.2;
  c.gm_sigma = 40.0;
  c.pose_prior_weight = 0.5;
  c.conf_threshold = 0.05;

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < instances; ++n) {
    Observation o;
    o.id = "tiny" + std::to_string(n);
    o.width = o.height = 1000;
    const Vec3 center(0.4 * (n - 0.5), 0.2, -4.0);
    o.camera_init = Camera::look_at(center, Vec3(0.0, 0.4, 0.0), o.intrinsics, o.width, o.height);
    std::vector<Pose> init;
    for (int t = 0; t < frames; ++t) {
      Pose p = random_pose(rng, joints, 0.4, 0.1);
      const Points2 px = world_to_pixels(*o.camera_init, regress_keypoints(s.model, forward_kinematics(s.model, p)));
      Keypoints2D kp(keypoints, 3);
      for (int k = 0; k < keypoints; ++k) {
        kp(k, 0) = px(k, 0) + 30.0 * (u(rng) - 0.5);
        kp(k, 1) = px(k, 1) + 30.0 * (u(rng) - 0.5);
        kp(k, 2) = u(rng) < 0.15 ? 0.0 : 0.2 + 0.8 * u(rng);
      }
      o.keypoints2d.push_back(kp);
      init.push_back(random_pose(rng, joints, 0.4, 0.1));
    }
    o.initial_pose3d = init;
    s.observations.push_back(std::move(o));
  }
  s.params = init_params(s.observations, c);
  return s;
}

/// Moves the recovered world by p -> r0 p + t0 at the parameter level and
/// conjugates every camera so that x_cam is unchanged. The root block of the
/// rotation head and the translation head are linear in the hidden features,
/// so the transform is exact; the identity template is compensated in the
/// root bias.
inline void apply_gauge(ad::ParamStore& store, int instances, const Mat3& r0, const Vec3& t0) {
  ad::Tensor& wr = store.mutable_value(pname::rot_head_w);
  ad::Tensor& br = store.mutable_value(pname::rot_head_b);
  for (int c = 0; c < 2; ++c) {
    wr.middleCols(3 * c, 3) = wr.middleCols(3 * c, 3) * r0.transpose();
    const Eigen::RowVector3d e = Vec3::Unit(c).transpose();
    br.middleCols(3 * c, 3) = (br.middleCols(3 * c, 3) + e) * r0.transpose() - e;
  }
  ad::Tensor& wt = store.mutable_value(pname::trans_head_w);
  ad::Tensor& bt = store.mutable_value(pname::trans_head_b);
  wt = wt * r0.transpose();
  bt = bt * r0.transpose() + t0.transpose();
  for (int n = 0; n < instances; ++n) {
    const ad::Tensor& six = store.value(pname::cam_rot6d(n));
    const Mat3 r = rot6d_to_matrix(Rot6D::from_array(std::span<const double, 6>(six.data(), 6)));
    const Mat3 rn = r * r0.transpose();
    const auto a = matrix_to_rot6d(rn).to_array();
    store.mutable_value(pname::cam_rot6d(n)) = Eigen::Map<const ad::Tensor>(a.data(), 1, 6);
    const Vec3 t = store.value(pname::cam_trans(n)).row(0).transpose();
    store.mutable_value(pname::cam_trans(n)) = (rn * t0 + t).transpose();
  }
}

}  // namespace nemo::testing
