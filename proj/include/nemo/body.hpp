#pragma once

// Kinematic body model: joint tree with rest offsets, a sparse keypoint
// regressor and an optional linear-blend-skinned mesh. Poses carry one 6D
// rotation per joint (index 0 is the root orientation) and a root
// translation.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "nemo/ad/geom.hpp"
#include "nemo/error.hpp"
#include "nemo/geom.hpp"

namespace nemo {

struct SparseEntry {
  int row = 0;
  int col = 0;
  double weight = 0.0;
};

struct SkinnedMesh {
  Points3 rest_vertices;
  /// V x J, rows sum to one.
  Eigen::MatrixXd weights;
};

struct BodyModel {
  int joints = 0;
  std::vector<int> parents;
  Points3 rest_offsets;
  int keypoints = 0;
  std::vector<SparseEntry> keypoint_regressor;
  std::optional<SkinnedMesh> mesh;
  /// Optional regressor from mesh vertices (cols index vertices).
  int vertex_keypoints = 0;
  std::vector<SparseEntry> vertex_regressor;

  void validate() const {
    if (joints < 1) throw ParseError("body model needs at least one joint");
    if (static_cast<int>(parents.size()) != joints || rest_offsets.rows() != joints) {
      throw ParseError("body model: parents/rest_offsets must have one entry per joint");
    }
    if (parents[0] != -1) throw ParseError("body model: joint 0 must be the root (parent -1)");
    for (int j = 1; j < joints; ++j) {
      if (parents[j] < 0 || parents[j] >= j) {
        throw ParseError("body model: parent of joint " + std::to_string(j) + " must precede it");
      }
    }
    if (keypoints < 1) throw ParseError("body model: keypoint regressor needs at least one row");
    for (const auto& e : keypoint_regressor) {
      if (e.row < 0 || e.row >= keypoints || e.col < 0 || e.col >= joints) {
        throw ParseError("body model: keypoint regressor entry out of range");
      }
      if (e.weight < 0.0) throw ParseError("body model: keypoint regressor weights must be nonnegative");
    }
    if (mesh) {
      if (mesh->weights.rows() != mesh->rest_vertices.rows() || mesh->weights.cols() != joints) {
        throw ParseError("body model: skinning weights must be V x J");
      }
      for (Eigen::Index v = 0; v < mesh->weights.rows(); ++v) {
        if (std::abs(mesh->weights.row(v).sum() - 1.0) > 1e-9) {
          throw ParseError("body model: skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
        }
      }
      for (const auto& e : vertex_regressor) {
        if (e.row < 0 || e.row >= vertex_keypoints || e.col < 0 || e.col >= mesh->rest_vertices.rows()) {
          throw ParseError("body model: vertex regressor entry out of range");
        }
      }
    }
  }

  /// Joint positions in the rest pose with the root at the origin.
  Points3 rest_joints() const {
    Points3 out(joints, 3);
    out.row(0).setZero();
    for (int j = 1; j < joints; ++j) out.row(j) = out.row(parents[j]) + rest_offsets.row(j);
    return out;
  }

  Eigen::MatrixXd keypoint_matrix() const {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(keypoints, joints);
    for (const auto& e : keypoint_regressor) w(e.row, e.col) += e.weight;
    return w;
  }
};

struct Pose {
  std::vector<Rot6D> rotations;  // [0] is the root orientation
  Vec3 root_trans = Vec3::Zero();

  static Pose identity(int joints) { return Pose{std::vector<Rot6D>(joints), Vec3::Zero()}; }

  int joints() const { return static_cast<int>(rotations.size()); }

  /// 6 numbers per joint followed by the root translation.
  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd out(joints() * 6 + 3);
    for (int j = 0; j < joints(); ++j) {
      out.segment<3>(6 * j) = rotations[j].a1;
      out.segment<3>(6 * j + 3) = rotations[j].a2;
    }
    out.tail<3>() = root_trans;
    return out;
  }

  static Pose from_vector(const Eigen::VectorXd& v, int joints) {
    if (v.size() != joints * 6 + 3) throw DimensionMismatch("pose vector has wrong length");
    Pose p = identity(joints);
    for (int j = 0; j < joints; ++j) {
      p.rotations[j].a1 = v.segment<3>(6 * j);
      p.rotations[j].a2 = v.segment<3>(6 * j + 3);
    }
    p.root_trans = v.tail<3>();
    return p;
  }

  /// Same pose with every rotation re-expressed as the first two columns of
  /// its orthonormalized matrix.
  Pose canonicalized() const {
    Pose p = *this;
    for (auto& r : p.rotations) r = matrix_to_rot6d(rot6d_to_matrix(r));
    return p;
  }
};

struct MotionSequence {
  std::vector<Pose> poses;
  std::vector<double> phases;

  int frames() const { return static_cast<int>(poses.size()); }
};

struct Kinematics {
  std::vector<Mat3> global_rotations;
  Points3 positions;
};

inline Kinematics forward_kinematics_full(const BodyModel& model, const Pose& pose) {
  if (pose.joints() != model.joints) {
    throw DimensionMismatch("pose has " + std::to_string(pose.joints()) + " joints, model has " +
                            std::to_string(model.joints));
  }
  Kinematics k;
  k.global_rotations.resize(model.joints);
  k.positions.resize(model.joints, 3);
  k.global_rotations[0] = rot6d_to_matrix(pose.rotations[0]);
  k.positions.row(0) = pose.root_trans.transpose();
  for (int j = 1; j < model.joints; ++j) {
    const int p = model.parents[j];
    k.global_rotations[j] = k.global_rotations[p] * rot6d_to_matrix(pose.rotations[j]);
    k.positions.row(j) =
        k.positions.row(p) + (k.global_rotations[p] * model.rest_offsets.row(j).transpose()).transpose();
  }
  return k;
}

inline Points3 forward_kinematics(const BodyModel& model, const Pose& pose) {
  return forward_kinematics_full(model, pose).positions;
}

inline Points3 regress_keypoints(const BodyModel& model, const Points3& joints) {
  if (joints.rows() != model.joints) throw DimensionMismatch("regress_keypoints: joint count mismatch");
  Points3 out = Points3::Zero(model.keypoints, 3);
  for (const auto& e : model.keypoint_regressor) out.row(e.row) += e.weight * joints.row(e.col);
  return out;
}

inline Points3 skin_vertices(const BodyModel& model, const Pose& pose) {
  if (!model.mesh) throw NoMesh("body model has no mesh");
  const Kinematics k = forward_kinematics_full(model, pose);
  const Points3 rest = model.rest_joints();
  const auto& mesh = *model.mesh;
  Points3 out = Points3::Zero(mesh.rest_vertices.rows(), 3);
  for (Eigen::Index v = 0; v < mesh.rest_vertices.rows(); ++v) {
    for (int j = 0; j < model.joints; ++j) {
      const double w = mesh.weights(v, j);
      if (w == 0.0) continue;
      const Vec3 local = (mesh.rest_vertices.row(v) - rest.row(j)).transpose();
      out.row(v) += w * (k.global_rotations[j] * local + k.positions.row(j).transpose()).transpose();
    }
  }
  return out;
}

/// Keypoints regressed from skinned vertices.
inline Points3 regress_from_vertices(const BodyModel& model, const Points3& vertices) {
  if (!model.mesh) throw NoMesh("body model has no mesh");
  if (vertices.rows() != model.mesh->rest_vertices.rows()) {
    throw DimensionMismatch("regress_from_vertices: vertex count mismatch");
  }
  Points3 out = Points3::Zero(model.vertex_keypoints, 3);
  for (const auto& e : model.vertex_regressor) out.row(e.row) += e.weight * vertices.row(e.col);
  return out;
}

// --- differentiable, batched over B frames ---

namespace ad {

/// Takes one local rotation per joint (each a batch of B) and a B x 3 root
/// translation; returns one B x 3 position tensor per joint.
inline std::vector<Var> forward_kinematics(const BodyModel& model, const std::vector<Rotation>& local,
                                           const Var& root_trans) {
  if (static_cast<int>(local.size()) != model.joints) {
    throw DimensionMismatch("ad::forward_kinematics: rotation count mismatch");
  }
  std::vector<Rotation> global(model.joints);
  std::vector<Var> pos(model.joints);
  global[0] = local[0];
  pos[0] = root_trans;
  for (int j = 1; j < model.joints; ++j) {
    const int p = model.parents[j];
    global[j] = compose(global[p], local[j]);
    pos[j] = pos[p] + rotate(global[p], Vec3(model.rest_offsets.row(j).transpose()));
  }
  return pos;
}

/// One B x 3 tensor per keypoint.
inline std::vector<Var> regress_keypoints(const BodyModel& model, const std::vector<Var>& joints) {
  std::vector<Var> out(model.keypoints);
  for (const auto& e : model.keypoint_regressor) {
    Var term = joints.at(e.col) * e.weight;
    out[e.row] = out[e.row].valid() ? out[e.row] + term : term;
  }
  for (int k = 0; k < model.keypoints; ++k) {
    if (!out[k].valid()) out[k] = joints.front() * 0.0;
  }
  return out;
}

}  // namespace ad

/// Default 24-joint humanoid (SMPL joint order, y up, subject facing +z,
/// left side +x) with a 13-keypoint layout and a 120-vertex stand-in mesh.
inline BodyModel default_humanoid() {
  BodyModel m;
  m.joints = 24;
  m.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  m.rest_offsets.resize(24, 3);
  m.rest_offsets << 0.0, 0.0, 0.0,   //  0 pelvis
      0.09, -0.08, 0.0,              //  1 left hip
      -0.09, -0.08, 0.0,             //  2 right hip
      0.0, 0.11, -0.02,              //  3 spine1
      0.0, -0.40, 0.0,               //  4 left knee
      0.0, -0.40, 0.0,               //  5 right knee
      0.0, 0.13, 0.01,               //  6 spine2
      0.0, -0.40, -0.03,             //  7 left ankle
      0.0, -0.40, -0.03,             //  8 right ankle
      0.0, 0.06, 0.02,               //  9 spine3
      0.0, -0.05, 0.12,              // 10 left foot
      0.0, -0.05, 0.12,              // 11 right foot
      0.0, 0.21, -0.03,              // 12 neck
      0.07, 0.12, -0.01,             // 13 left collar
      -0.07, 0.12, -0.01,            // 14 right collar
      0.0, 0.09, 0.05,               // 15 head
      0.11, 0.05, -0.01,             // 16 left shoulder
      -0.11, 0.05, -0.01,            // 17 right shoulder
      0.26, 0.0, 0.0,                // 18 left elbow
      -0.26, 0.0, 0.0,               // 19 right elbow
      0.25, 0.0, 0.0,                // 20 left wrist
      -0.25, 0.0, 0.0,               // 21 right wrist
      0.08, 0.0, 0.0,                // 22 left hand
      -0.08, 0.0, 0.0;               // 23 right hand

  // head, shoulders, elbows, wrists, hips, knees, ankles (left before right)
  const int layout[13] = {15, 16, 17, 18, 19, 20, 21, 1, 2, 4, 5, 7, 8};
  m.keypoints = 13;
  for (int k = 0; k < 13; ++k) m.keypoint_regressor.push_back({k, layout[k], 1.0});

  const double radius[24] = {0.0,  0.06, 0.06, 0.12, 0.07, 0.07, 0.13, 0.05, 0.05, 0.13, 0.04, 0.04,
                             0.05, 0.05, 0.05, 0.06, 0.05, 0.05, 0.045, 0.045, 0.04, 0.04, 0.03, 0.03};
  const Points3 rest = m.rest_joints();
  constexpr int kRing = 5;
  SkinnedMesh mesh;
  mesh.rest_vertices.resize(23 * kRing + kRing, 3);
  mesh.weights = Eigen::MatrixXd::Zero(mesh.rest_vertices.rows(), 24);
  int v = 0;
  auto add_ring = [&](const Vec3& center, const Vec3& axis, double r, int main_joint, int blend_joint) {
    Vec3 helper = std::abs(axis.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
    const Vec3 e1 = axis.cross(helper).normalized();
    const Vec3 e2 = axis.cross(e1).normalized();
    for (int i = 0; i < kRing; ++i) {
      const double a = 2.0 * M_PI * i / kRing;
      mesh.rest_vertices.row(v) = (center + r * (std::cos(a) * e1 + std::sin(a) * e2)).transpose();
      if (blend_joint == main_joint) {
        mesh.weights(v, main_joint) = 1.0;
      } else {
        mesh.weights(v, main_joint) = 0.8;
        mesh.weights(v, blend_joint) = 0.2;
      }
      ++v;
    }
  };
  for (int j = 1; j < 24; ++j) {
    const int p = m.parents[j];
    const Vec3 a = rest.row(p).transpose();
    const Vec3 b = rest.row(j).transpose();
    add_ring(0.5 * (a + b), (b - a).normalized(), radius[j], p, j);
  }
  add_ring(rest.row(15).transpose() + Vec3(0.0, 0.1, 0.0), Vec3::UnitY(), 0.09, 15, 15);
  m.mesh = std::move(mesh);
  return m;
}

}  // namespace nemo
