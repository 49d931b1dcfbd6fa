#pragma once

// 3D and 2D evaluation metrics. Distances in 3D are reported in millimeters,
// 2D in pixels.

#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nemo/body.hpp"
#include "nemo/geom.hpp"
#include "nemo/scene.hpp"

namespace nemo {

using JointSequence = std::vector<Points3>;
using PixelSequence = std::vector<Points2>;
/// T x K visibility.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using FrameInterval = std::pair<int, int>;  // 1-indexed, inclusive

inline constexpr double kPckFraction = 0.1;
inline constexpr double kDynamicSpeed = 2.0;  // m/s

namespace detail {
inline void check_same_shape(const JointSequence& a, const JointSequence& b, const char* what) {
  if (a.size() != b.size()) throw ShapeMismatch(std::string(what) + ": frame counts differ");
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].rows() != b[t].rows()) throw ShapeMismatch(std::string(what) + ": point counts differ");
  }
}
inline void check_same_shape(const PixelSequence& a, const PixelSequence& b, const Mask& mask, const char* what) {
  if (a.size() != b.size() || static_cast<Eigen::Index>(a.size()) != mask.rows()) {
    throw ShapeMismatch(std::string(what) + ": frame counts differ");
  }
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].rows() != b[t].rows() || a[t].rows() != mask.cols()) {
      throw ShapeMismatch(std::string(what) + ": keypoint counts differ");
    }
  }
}
}  // namespace detail

/// Points of a predicted frame re-expressed with the ground-truth root
/// position and orientation of the same frame.
inline Points3 root_align(const Points3& pred, const Eigen::RowVector3d& pred_root_pos, const Mat3& pred_root,
                          const Eigen::RowVector3d& gt_root_pos, const Mat3& gt_root) {
  const Mat3 r = gt_root * pred_root.transpose();
  Points3 out = (pred.rowwise() - pred_root_pos) * r.transpose();
  out.rowwise() += gt_root_pos;
  return out;
}

/// Per-frame root-aligned mean distance in mm.
inline std::vector<double> mpjpe_per_frame(const JointSequence& pred, const JointSequence& gt,
                                           const std::vector<Mat3>& pred_root, const std::vector<Mat3>& gt_root,
                                           int root = 0) {
  detail::check_same_shape(pred, gt, "mpjpe");
  if (pred_root.size() != pred.size() || gt_root.size() != gt.size()) {
    throw ShapeMismatch("mpjpe: one root orientation per frame required");
  }
  std::vector<double> out;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const Points3 aligned = root_align(pred[t], pred[t].row(root), pred_root[t], gt[t].row(root), gt_root[t]);
    out.push_back(1000.0 * (aligned - gt[t]).rowwise().norm().mean());
  }
  return out;
}

inline double mpjpe(const JointSequence& pred, const JointSequence& gt, const std::vector<Mat3>& pred_root,
                    const std::vector<Mat3>& gt_root, int root = 0) {
  const auto f = mpjpe_per_frame(pred, gt, pred_root, gt_root, root);
  if (f.empty()) throw ShapeMismatch("mpjpe: empty sequence");
  double acc = 0.0;
  for (double v : f) acc += v;
  return acc / static_cast<double>(f.size());
}

inline Points3 stack(const JointSequence& seq) {
  Eigen::Index total = 0;
  for (const auto& f : seq) total += f.rows();
  Points3 out(total, 3);
  Eigen::Index off = 0;
  for (const auto& f : seq) {
    out.middleRows(off, f.rows()) = f;
    off += f.rows();
  }
  return out;
}

/// One rigid (no scale) transform over all frames, pred -> gt.
inline RigidTransform sequence_alignment(const JointSequence& pred, const JointSequence& gt) {
  detail::check_same_shape(pred, gt, "global alignment");
  return rigid_align(stack(pred), stack(gt));
}

inline std::vector<double> aligned_errors_per_frame(const JointSequence& pred, const JointSequence& gt,
                                                    const RigidTransform& tf) {
  detail::check_same_shape(pred, gt, "global error");
  std::vector<double> out;
  for (std::size_t t = 0; t < pred.size(); ++t) out.push_back(1000.0 * (tf.apply(pred[t]) - gt[t]).rowwise().norm().mean());
  return out;
}

inline double global_mpjpe(const JointSequence& pred, const JointSequence& gt) {
  const RigidTransform tf = sequence_alignment(pred, gt);
  const Points3 diff = tf.apply(stack(pred)) - stack(gt);
  return 1000.0 * diff.rowwise().norm().mean();
}

/// Global error of `pred` after an externally computed alignment.
inline double aligned_error(const JointSequence& pred, const JointSequence& gt, const RigidTransform& tf) {
  detail::check_same_shape(pred, gt, "global error");
  return 1000.0 * (tf.apply(stack(pred)) - stack(gt)).rowwise().norm().mean();
}

inline double recon2d(const PixelSequence& pred, const PixelSequence& gt, const Mask& mask) {
  detail::check_same_shape(pred, gt, mask, "recon2d");
  double acc = 0.0;
  long count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (Eigen::Index k = 0; k < pred[t].rows(); ++k) {
      if (!mask(t, k)) continue;
      acc += (pred[t].row(k) - gt[t].row(k)).norm();
      ++count;
    }
  }
  if (count == 0) throw EmptyMask("recon2d: no unmasked keypoints");
  return acc / static_cast<double>(count);
}

/// Fraction of unmasked keypoints with error <= 0.1 * bbox of their frame.
inline double pck(const PixelSequence& pred, const PixelSequence& gt, const std::vector<double>& bbox_sizes,
                  const Mask& mask) {
  detail::check_same_shape(pred, gt, mask, "pck");
  if (bbox_sizes.size() != pred.size()) throw ShapeMismatch("pck: one bbox size per frame required");
  long hit = 0, count = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (!(bbox_sizes[t] > 0.0)) throw ShapeMismatch("pck: bbox size must be positive");
    const double thr = kPckFraction * bbox_sizes[t];
    for (Eigen::Index k = 0; k < pred[t].rows(); ++k) {
      if (!mask(t, k)) continue;
      ++count;
      if ((pred[t].row(k) - gt[t].row(k)).norm() <= thr) ++hit;
    }
  }
  if (count == 0) throw EmptyMask("pck: no unmasked keypoints");
  return static_cast<double>(hit) / static_cast<double>(count);
}

inline double pck(const PixelSequence& pred, const PixelSequence& gt, double bbox_size, const Mask& mask) {
  return pck(pred, gt, std::vector<double>(pred.size(), bbox_size), mask);
}

/// Longest side of the tight bounding box of one frame's keypoints.
inline double bbox_size(const Points2& keypoints) {
  const Eigen::RowVector2d extent = keypoints.colwise().maxCoeff() - keypoints.colwise().minCoeff();
  return extent.maxCoeff();
}

/// Max joint speed per frame (backward difference, assigned to the later
/// frame; frame 1 gets 0).
inline std::vector<double> frame_speeds(const JointSequence& joints, double fps) {
  std::vector<double> out(joints.size(), 0.0);
  for (std::size_t t = 1; t < joints.size(); ++t) {
    out[t] = (joints[t] - joints[t - 1]).rowwise().norm().maxCoeff() * fps;
  }
  return out;
}

/// [first, last] 1-indexed frames whose max joint speed exceeds 2 m/s.
inline std::optional<FrameInterval> dynamic_range(const JointSequence& joints, double fps) {
  if (joints.size() < 2) throw ShapeMismatch("dynamic_range needs T >= 2");
  if (!(fps > 0.0)) throw ShapeMismatch("dynamic_range needs fps > 0");
  const auto speed = frame_speeds(joints, fps);
  int first = -1, last = -1;
  for (std::size_t t = 1; t < speed.size(); ++t) {
    if (speed[t] > kDynamicSpeed) {
      if (first < 0) first = static_cast<int>(t) + 1;
      last = static_cast<int>(t) + 1;
    }
  }
  if (first < 0) return std::nullopt;
  return FrameInterval{first, last};
}

// --- whole-report evaluation ---

struct MetricSet {
  double mpjpe = 0.0;
  std::optional<double> mpvpe;
  double global_mpjpe = 0.0;
  std::optional<double> global_mpvpe;
  std::optional<double> recon2d;
  std::optional<double> pck;
};

struct InstanceReport {
  std::string id;
  MetricSet full;
  std::optional<FrameInterval> dynamic_range;
  std::optional<MetricSet> dynamic;
  std::vector<double> frame_mpjpe;
  std::vector<double> frame_global_mpjpe;
  std::vector<double> frame_recon2d;  // NaN where a frame has no visible keypoint
};

struct EvalReport {
  std::vector<InstanceReport> instances;
  MetricSet mean;
  std::optional<MetricSet> dynamic_mean;
};

/// Everything needed to score one instance.
struct EvalInput {
  std::string id;
  double fps = 30.0;
  std::vector<Pose> pred_poses;
  std::vector<Pose> gt_poses;
  Camera pred_camera;
  Camera gt_camera;
  Mask visible;
};

namespace detail {

struct PosedSequence {
  JointSequence joints;
  std::optional<JointSequence> vertices;
  std::vector<Mat3> roots;
  PixelSequence pixels;
};

inline PosedSequence pose_sequence(const BodyModel& model, const std::vector<Pose>& poses, const Camera& cam) {
  PosedSequence s;
  if (model.mesh) s.vertices.emplace();
  for (const auto& p : poses) {
    const Kinematics k = forward_kinematics_full(model, p);
    s.joints.push_back(k.positions);
    s.roots.push_back(k.global_rotations[0]);
    if (model.mesh) s.vertices->push_back(skin_vertices(model, p));
    s.pixels.push_back(world_to_pixels(cam, regress_keypoints(model, k.positions)));
  }
  return s;
}

template <class T>
std::vector<T> slice(const std::vector<T>& v, int first, int last) {
  return std::vector<T>(v.begin() + (first - 1), v.begin() + last);
}

inline Mask slice(const Mask& m, int first, int last) { return m.middleRows(first - 1, last - first + 1); }

inline MetricSet score(const PosedSequence& pred, const PosedSequence& gt, const Mask& mask) {
  MetricSet m;
  m.mpjpe = mpjpe(pred.joints, gt.joints, pred.roots, gt.roots);
  // Global alignment uses vertices when a mesh exists, joints otherwise.
  const RigidTransform tf =
      pred.vertices ? sequence_alignment(*pred.vertices, *gt.vertices) : sequence_alignment(pred.joints, gt.joints);
  m.global_mpjpe = aligned_error(pred.joints, gt.joints, tf);
  if (pred.vertices) {
    double acc = 0.0;
    for (std::size_t t = 0; t < pred.vertices->size(); ++t) {
      const Points3 v = root_align((*pred.vertices)[t], pred.joints[t].row(0), pred.roots[t], gt.joints[t].row(0),
                                   gt.roots[t]);
      acc += 1000.0 * (v - (*gt.vertices)[t]).rowwise().norm().mean();
    }
    m.mpvpe = acc / static_cast<double>(pred.vertices->size());
    m.global_mpvpe = aligned_error(*pred.vertices, *gt.vertices, tf);
  }
  if (mask.any()) {
    m.recon2d = recon2d(pred.pixels, gt.pixels, mask);
    std::vector<double> boxes;
    for (const auto& f : gt.pixels) boxes.push_back(bbox_size(f));
    m.pck = pck(pred.pixels, gt.pixels, boxes, mask);
  }
  return m;
}

inline PosedSequence slice(const PosedSequence& s, int first, int last) {
  PosedSequence out;
  out.joints = slice(s.joints, first, last);
  if (s.vertices) out.vertices = slice(*s.vertices, first, last);
  out.roots = slice(s.roots, first, last);
  out.pixels = slice(s.pixels, first, last);
  return out;
}

inline void accumulate(MetricSet& acc, const MetricSet& m, int& n2d) {
  acc.mpjpe += m.mpjpe;
  acc.global_mpjpe += m.global_mpjpe;
  if (m.mpvpe) acc.mpvpe = acc.mpvpe.value_or(0.0) + *m.mpvpe;
  if (m.global_mpvpe) acc.global_mpvpe = acc.global_mpvpe.value_or(0.0) + *m.global_mpvpe;
  if (m.recon2d) {
    acc.recon2d = acc.recon2d.value_or(0.0) + *m.recon2d;
    acc.pck = acc.pck.value_or(0.0) + *m.pck;
    ++n2d;
  }
}

inline MetricSet finish_mean(MetricSet acc, int n, int n2d) {
  acc.mpjpe /= n;
  acc.global_mpjpe /= n;
  if (acc.mpvpe) *acc.mpvpe /= n;
  if (acc.global_mpvpe) *acc.global_mpvpe /= n;
  if (acc.recon2d) *acc.recon2d /= n2d;
  if (acc.pck) *acc.pck /= n2d;
  return acc;
}

}  // namespace detail

/// Scores each instance over the full sequence and over the ground truth's
/// dynamic range; means are taken over instances.
inline EvalReport evaluate(const BodyModel& model, const std::vector<EvalInput>& inputs) {
  EvalReport report;
  MetricSet sum, dyn_sum;
  int n2d = 0, dyn_n = 0, dyn_n2d = 0;
  for (const auto& in : inputs) {
    if (in.pred_poses.size() != in.gt_poses.size()) throw ShapeMismatch("evaluate: frame counts differ for " + in.id);
    const auto pred = detail::pose_sequence(model, in.pred_poses, in.pred_camera);
    const auto gt = detail::pose_sequence(model, in.gt_poses, in.gt_camera);
    InstanceReport r;
    r.id = in.id;
    r.full = detail::score(pred, gt, in.visible);
    r.frame_mpjpe = mpjpe_per_frame(pred.joints, gt.joints, pred.roots, gt.roots);
    const RigidTransform tf = pred.vertices ? sequence_alignment(*pred.vertices, *gt.vertices)
                                            : sequence_alignment(pred.joints, gt.joints);
    r.frame_global_mpjpe = aligned_errors_per_frame(pred.joints, gt.joints, tf);
    for (std::size_t t = 0; t < pred.pixels.size(); ++t) {
      double acc = 0.0;
      int c = 0;
      for (Eigen::Index k = 0; k < pred.pixels[t].rows(); ++k) {
        if (!in.visible(t, k)) continue;
        acc += (pred.pixels[t].row(k) - gt.pixels[t].row(k)).norm();
        ++c;
      }
      r.frame_recon2d.push_back(c ? acc / c : std::numeric_limits<double>::quiet_NaN());
    }
    detail::accumulate(sum, r.full, n2d);
    r.dynamic_range = dynamic_range(gt.joints, in.fps);
    if (r.dynamic_range) {
      const auto [a, b] = *r.dynamic_range;
      const auto ps = detail::slice(pred, a, b);
      const auto gs = detail::slice(gt, a, b);
      const int points = static_cast<int>((b - a + 1) * (pred.vertices ? pred.vertices->front().rows() : pred.joints.front().rows()));
      if (points >= 3) {
        r.dynamic = detail::score(ps, gs, detail::slice(in.visible, a, b));
        detail::accumulate(dyn_sum, *r.dynamic, dyn_n2d);
        ++dyn_n;
      }
    }
    report.instances.push_back(std::move(r));
  }
  if (inputs.empty()) throw ShapeMismatch("evaluate: no instances");
  report.mean = detail::finish_mean(sum, static_cast<int>(inputs.size()), n2d);
  if (dyn_n > 0) report.dynamic_mean = detail::finish_mean(dyn_sum, dyn_n, dyn_n2d);
  return report;
}

}  // namespace nemo
