#pragma once

// Cameras and the full chain phase -> field -> body -> camera -> pixels.

#include <string>
#include <vector>

#include "nemo/ad/geom.hpp"
#include "nemo/body.hpp"
#include "nemo/field.hpp"

namespace nemo {

struct Camera {
  CameraIntrinsics intrinsics;
  Rot6D rotation;  // world-to-camera
  Vec3 translation = Vec3::Zero();
  int width = 1000;
  int height = 1000;

  Mat3 rotation_matrix() const { return rot6d_to_matrix(rotation); }

  /// Camera at `center` looking at `target`. x_cam = R p - t with t = R center.
  static Camera look_at(const Vec3& center, const Vec3& target, const CameraIntrinsics& k, int width,
                        int height) {
    Camera c;
    c.intrinsics = k;
    const Mat3 r = look_at_rotation(center, target);
    c.rotation = matrix_to_rot6d(r);
    c.translation = r * center;
    c.width = width;
    c.height = height;
    return c;
  }

  /// Placement used when no initial extrinsics are known: 5 m down the -z
  /// world axis looking at the origin.
  static Camera default_placement(const CameraIntrinsics& k, int width, int height) {
    return look_at(Vec3(0.0, 0.0, -5.0), Vec3::Zero(), k, width, height);
  }
};

inline Vec3 world_to_camera(const Camera& cam, const Vec3& p) { return cam.rotation_matrix() * p - cam.translation; }

inline Points2 world_to_pixels(const Camera& cam, const Points3& points) {
  const Mat3 r = cam.rotation_matrix();
  Points2 out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Vec3 pc = r * points.row(i).transpose() - cam.translation;
    if (!(pc.z() > kDepthEps)) {
      throw BehindCamera("point " + std::to_string(i) + " has depth " + std::to_string(pc.z()));
    }
    out.row(i) = perspective_project(pc, cam.intrinsics).transpose();
  }
  return out;
}

namespace ad {

/// M x 3 world points -> M x 2 pixels given a 1 x 6 rotation and 1 x 3
/// translation.
inline Var world_to_pixels(const Var& rot6d, const Var& trans, const Var& points, const CameraIntrinsics& k) {
  const Rotation r = rot6d_to_rotation(rot6d);
  return project(rotate(r, points) - trans, k);
}

}  // namespace ad

inline CameraIntrinsics intrinsics_from_tensor(const ad::Tensor& t) { return {t(0, 0), t(0, 1), t(0, 2), t(0, 3)}; }

inline ad::Tensor intrinsics_to_tensor(const CameraIntrinsics& k) {
  ad::Tensor t(1, 4);
  t << k.fx, k.fy, k.cx, k.cy;
  return t;
}

/// Registers camera n in the store; intrinsics are always frozen.
inline void add_camera(ad::ParamStore& store, int n, const Camera& cam, bool learnable) {
  const auto a = cam.rotation.to_array();
  store.add(pname::cam_rot6d(n), Eigen::Map<const ad::Tensor>(a.data(), 1, 6), learnable);
  store.add(pname::cam_trans(n), ad::Tensor(cam.translation.transpose()), learnable);
  store.add(pname::cam_intrinsics(n), intrinsics_to_tensor(cam.intrinsics), false);
}

inline Camera camera_from_store(const ad::ParamStore& store, int n, int width, int height) {
  Camera c;
  const ad::Tensor& r = store.value(pname::cam_rot6d(n));
  c.rotation = Rot6D::from_array(std::span<const double, 6>(r.data(), 6));
  c.translation = store.value(pname::cam_trans(n)).row(0).transpose();
  c.intrinsics = intrinsics_from_tensor(store.value(pname::cam_intrinsics(n)));
  c.width = width;
  c.height = height;
  return c;
}

struct InstanceProjection {
  InstanceMotion motion;
  std::vector<ad::Var> joints;  // J tensors, T x 3
  ad::Var pixels;               // (K*T) x 2, keypoint-major: row k*T + t
};

/// Differentiable 2D keypoint trajectory of instance n.
inline InstanceProjection forward_instance(ad::Tape& tape, const ad::ParamStore& store, const FieldConfig& cfg,
                                           const BodyModel& model, int n, int frames) {
  if (cfg.joints != model.joints) throw DimensionMismatch("field joint count differs from body model");
  InstanceProjection out;
  out.motion = instance_motion(tape, store, cfg, n, frames);
  out.joints = ad::forward_kinematics(model, joint_rotations(out.motion.out.rot6d, model.joints), out.motion.out.trans);
  const ad::Var keypoints = ad::concat_rows(ad::regress_keypoints(model, out.joints));
  out.pixels = ad::world_to_pixels(tape.parameter(store, pname::cam_rot6d(n)), tape.parameter(store, pname::cam_trans(n)),
                                   keypoints, intrinsics_from_tensor(store.value(pname::cam_intrinsics(n))));
  return out;
}

/// Plain version: T frames of K x 2 pixels.
inline std::vector<Points2> forward_instance(const ad::ParamStore& store, const FieldConfig& cfg,
                                             const BodyModel& model, int n, int frames) {
  ad::Tape tape;
  const InstanceProjection p = forward_instance(tape, store, cfg, model, n, frames);
  const ad::Tensor& px = p.pixels.value();
  std::vector<Points2> out(frames, Points2(model.keypoints, 2));
  for (int k = 0; k < model.keypoints; ++k) {
    for (int t = 0; t < frames; ++t) out[t].row(k) = px.row(k * frames + t);
  }
  return out;
}

}  // namespace nemo
