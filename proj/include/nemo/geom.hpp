#pragma once

// Rotation representations, rigid transforms, projection and robust errors.
// Everything here works on plain doubles; differentiable counterparts used by
// the fitter live in nemo/ad/geom.hpp.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>

#include "nemo/error.hpp"

namespace nemo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// One point per row.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

inline constexpr double kRot6dEps = 1e-8;
inline constexpr double kDepthEps = 1e-6;

/// First two columns of a rotation matrix before orthonormalization.
struct Rot6D {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();

  static Rot6D from_array(std::span<const double, 6> v) {
    return {Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])};
  }
  std::array<double, 6> to_array() const {
    return {a1.x(), a1.y(), a1.z(), a2.x(), a2.y(), a2.z()};
  }
};

struct CameraIntrinsics {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 500.0;
  double cy = 500.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw ParseError("camera intrinsics require fx > 0 and fy > 0");
    }
  }
};

/// Gram-Schmidt: b1 = a1/|a1|, b2 = normalized rejection of a2 from b1,
/// b3 = b1 x b2. Columns of the result are [b1 b2 b3].
inline Mat3 rot6d_to_matrix(const Rot6D& r) {
  const double n1 = r.a1.norm();
  if (!(n1 > kRot6dEps)) {
    throw DegenerateRotation("rot6d: first column has norm " + std::to_string(n1));
  }
  const Vec3 b1 = r.a1 / n1;
  const Vec3 rejected = r.a2 - b1.dot(r.a2) * b1;
  const double n2 = rejected.norm();
  if (!(n2 > kRot6dEps)) {
    throw DegenerateRotation("rot6d: second column is parallel to the first");
  }
  const Vec3 b2 = rejected / n2;
  Mat3 m;
  m.col(0) = b1;
  m.col(1) = b2;
  m.col(2) = b1.cross(b2);
  return m;
}

inline Rot6D matrix_to_rot6d(const Mat3& m) { return {m.col(0), m.col(1)}; }

inline Vec2 perspective_project(const Vec3& x, const CameraIntrinsics& k) {
  if (!(x.z() > kDepthEps)) {
    throw BehindCamera("point depth " + std::to_string(x.z()) + " is not in front of the camera");
  }
  return {k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

/// rho(e) = sigma^2 |e|^2 / (sigma^2 + |e|^2). Bounded by min(|e|^2, sigma^2).
inline double geman_mcclure(const Vec2& residual, double sigma) {
  const double s2 = sigma * sigma;
  const double e2 = residual.squaredNorm();
  return s2 * e2 / (s2 + e2);
}

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Points3 apply(const Points3& pts) const {
    Points3 out = pts * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
  }
};

/// Least-squares rotation + translation (no scale) taking `source` onto
/// `target` (Kabsch with reflection correction).
inline RigidTransform rigid_align(const Points3& source, const Points3& target) {
  if (source.rows() != target.rows()) {
    throw ShapeMismatch("rigid_align: point counts differ");
  }
  if (source.rows() < 3) {
    throw DegenerateConfiguration("rigid_align: need at least 3 points");
  }
  const Eigen::RowVector3d src_mean = source.colwise().mean();
  const Eigen::RowVector3d dst_mean = target.colwise().mean();
  const Mat3 cov = (source.rowwise() - src_mean).transpose() * (target.rowwise() - dst_mean);

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateConfiguration("rigid_align: points are collinear or coincident");
  }
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  RigidTransform out;
  out.rotation = v * d * u.transpose();
  out.translation = dst_mean.transpose() - out.rotation * src_mean.transpose();
  return out;
}

inline double alignment_residual(const RigidTransform& tf, const Points3& source,
                                 const Points3& target) {
  return (tf.apply(source) - target).rowwise().squaredNorm().sum();
}

// --- helpers used by the generator, metrics and tests ---

inline Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

inline Vec3 matrix_to_axis_angle(const Mat3& m) {
  const Eigen::AngleAxisd aa(m);
  return aa.axis() * aa.angle();
}

/// Geodesic interpolation from `from` (u = 0) to `to` (u = 1).
inline Mat3 slerp(const Mat3& from, const Mat3& to, double u) {
  const Vec3 delta = matrix_to_axis_angle(from.transpose() * to);
  return from * axis_angle_to_matrix(u * delta);
}

inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

/// Haar-uniform rotation from the QR factorization of a Gaussian matrix.
template <class Rng>
Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat3 a;
  for (int i = 0; i < 9; ++i) a.data()[i] = normal(rng);
  Eigen::HouseholderQR<Mat3> qr(a);
  Mat3 q = qr.householderQ();
  const Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < 3; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  if (q.determinant() < 0.0) q.col(2) *= -1.0;
  return q;
}

/// Orientation of a camera at `center` looking at `target`; image x right,
/// image y down, optical axis +z. Returns the world-to-camera rotation.
inline Mat3 look_at_rotation(const Vec3& center, const Vec3& target, const Vec3& up = Vec3::UnitY()) {
  const Vec3 forward = (target - center).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    throw DegenerateConfiguration("look_at: view direction parallel to up vector");
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  return r;
}

}  // namespace nemo
