#pragma once

// Synthetic ground truth: a canonical keyframed motion, per-instance phase
// warps and pose variations, a ring of cameras, and rendered (optionally
// noisy and occluded) 2D observations with corrupted 3D initial estimates.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nemo/body.hpp"
#include "nemo/pipeline.hpp"
#include "nemo/scene.hpp"

namespace nemo {

struct SynthSpec {
  std::string action = "synthetic_swing";
  std::uint64_t seed = 0;
  int instances = 4;
  std::vector<int> frames = {50};  // one entry, or one per instance
  double fps = 30.0;
  int keyframes = 5;
  double motion_amplitude = 0.6;  // radians, scales keyframe joint rotations
  double root_amplitude = 0.3;    // meters, keyframe root displacement
  double warp_strength = 0.3;     // 0 = identity warp
  int warp_knots = 4;
  double perturbation = 0.05;  // radians, per-instance constant joint offsets
  double camera_radius = 4.0;
  double camera_height = 0.3;
  std::vector<double> camera_azimuths_deg;  // empty: evenly spaced
  double camera_azimuth_offset_deg = 15.0;
  int image_width = 1000;
  int image_height = 1000;
  double focal = 1000.0;
  double pixel_noise = 0.0;
  double occlusion_fraction = 0.0;
  bool occlusion_disjoint = true;
  double init_rot_noise = 0.1;  // radians, per frame and joint
  double init_arm_bias = 0.3;   // radians, constant per instance on the arms
  double init_trans_noise = 0.05;
  TimeConvention time_convention = TimeConvention::TOverT;

  int frames_of(int n) const { return frames.size() == 1 ? frames.front() : frames.at(n); }

  void validate() const {
    if (instances < 1) throw ParseError("synth spec: instances must be >= 1");
    if (frames.empty() || (frames.size() != 1 && static_cast<int>(frames.size()) != instances)) {
      throw ParseError("synth spec: frames must have one entry or one per instance");
    }
    for (int f : frames) {
      if (f < 2) throw ParseError("synth spec: every instance needs at least 2 frames");
    }
    if (keyframes < 2) throw ParseError("synth spec: keyframes must be >= 2");
    if (warp_knots < 1) throw ParseError("synth spec: warp_knots must be >= 1");
    for (double s : {motion_amplitude, root_amplitude, warp_strength, perturbation, pixel_noise, init_rot_noise,
                     init_arm_bias, init_trans_noise, camera_radius}) {
      if (!(s >= 0.0)) throw ParseError("synth spec: scales must be nonnegative");
    }
    if (warp_strength > 1.0) throw ParseError("synth spec: warp_strength must be in [0, 1]");
    if (!(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0)) {
      throw ParseError("synth spec: occlusion_fraction must be in [0, 1)");
    }
    if (!camera_azimuths_deg.empty() && static_cast<int>(camera_azimuths_deg.size()) != instances) {
      throw ParseError("synth spec: camera_azimuths_deg needs one entry per instance");
    }
    if (!(fps > 0.0) || !(focal > 0.0)) throw ParseError("synth spec: fps and focal must be positive");
  }
};

/// Continuous phase -> pose map through keyframes. Rotations follow
/// geodesics between consecutive keyframes with smoothstep easing, so the
/// motion is C1 in phase; root translation uses the same easing linearly.
class CanonicalMotion {
 public:
  CanonicalMotion() = default;
  explicit CanonicalMotion(std::vector<Pose> keyframes) : keys_(std::move(keyframes)) {
    if (keys_.size() < 2) throw ParseError("canonical motion needs at least 2 keyframes");
    for (const auto& k : keys_) {
      std::vector<Mat3> r;
      for (const auto& rot : k.rotations) r.push_back(rot6d_to_matrix(rot));
      mats_.push_back(std::move(r));
    }
  }

  const std::vector<Pose>& keyframes() const { return keys_; }
  int joints() const { return keys_.front().joints(); }

  Pose at(double phase) const {
    const double x = std::clamp(phase, 0.0, 1.0) * static_cast<double>(keys_.size() - 1);
    const std::size_t seg = std::min(static_cast<std::size_t>(x), keys_.size() - 2);
    const double u = x - static_cast<double>(seg);
    if (u == 0.0) return keys_[seg];
    if (u == 1.0) return keys_[seg + 1];
    const double e = u * u * (3.0 - 2.0 * u);
    Pose p = Pose::identity(joints());
    for (int j = 0; j < joints(); ++j) p.rotations[j] = matrix_to_rot6d(slerp(mats_[seg][j], mats_[seg + 1][j], e));
    p.root_trans = (1.0 - e) * keys_[seg].root_trans + e * keys_[seg + 1].root_trans;
    return p;
  }

 private:
  std::vector<Pose> keys_;
  std::vector<std::vector<Mat3>> mats_;
};

/// Monotone piecewise-linear map [0,1] -> [0,1] with fixed endpoints.
struct PhaseWarp {
  std::vector<double> knots;   // increasing, 0 .. 1
  std::vector<double> values;  // nondecreasing, 0 .. 1

  static PhaseWarp identity() { return {{0.0, 1.0}, {0.0, 1.0}}; }

  double operator()(double t) const {
    t = std::clamp(t, 0.0, 1.0);
    const auto it = std::upper_bound(knots.begin(), knots.end(), t);
    const std::size_t i = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - knots.begin(), 1), knots.size() - 1);
    const double u = (t - knots[i - 1]) / (knots[i] - knots[i - 1]);
    return values[i - 1] + u * (values[i] - values[i - 1]);
  }
};

struct SynthScene {
  std::vector<Observation> observations;
  std::vector<MotionSequence> ground_truth;
  std::vector<Camera> cameras;
  std::vector<PhaseWarp> warps;
  CanonicalMotion canonical;
};

namespace detail {

/// Relative amplitude of each of the 24 default joints.
inline double joint_amplitude(int j, int joints) {
  if (joints != 24) return 1.0;
  static const double amp[24] = {0.4, 1.0, 1.0, 0.3, 1.0, 1.0, 0.3, 0.5, 0.5, 0.3, 0.3, 0.3,
                                 0.3, 0.3, 0.3, 0.4, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.3, 0.3};
  return amp[j];
}

inline bool is_arm_joint(int j, int joints) { return joints == 24 && j >= 16 && j <= 19; }

template <class Rng>
Vec3 random_axis_angle(Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Vec3(u(rng), u(rng), u(rng)) * scale;
}

template <class Rng>
Vec3 gaussian_vec(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)) * sigma;
}

}  // namespace detail

inline CanonicalMotion generate_canonical(const SynthSpec& spec, const BodyModel& model) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Pose> keys;
  for (int k = 0; k < spec.keyframes; ++k) {
    Pose p = Pose::identity(model.joints);
    for (int j = 0; j < model.joints; ++j) {
      const double amp = spec.motion_amplitude * detail::joint_amplitude(j, model.joints);
      Vec3 aa = detail::random_axis_angle(rng, amp);
      if (j == 0) aa = Vec3(0.3 * aa.x(), aa.y(), 0.3 * aa.z());  // mostly yaw at the root
      p.rotations[j] = matrix_to_rot6d(axis_angle_to_matrix(aa));
    }
    p.root_trans = Vec3(u(rng), 0.3 * u(rng), u(rng)) * spec.root_amplitude;
    keys.push_back(std::move(p));
  }
  return CanonicalMotion(std::move(keys));
}

template <class Rng>
PhaseWarp random_warp(Rng& rng, int knots, double strength) {
  if (strength == 0.0) return PhaseWarp::identity();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> r(knots - 1);
  for (double& v : r) v = u(rng);
  std::sort(r.begin(), r.end());
  PhaseWarp w;
  w.knots.push_back(0.0);
  w.values.push_back(0.0);
  for (int i = 1; i < knots; ++i) {
    const double x = static_cast<double>(i) / knots;
    w.knots.push_back(x);
    w.values.push_back((1.0 - strength) * x + strength * r[i - 1]);
  }
  w.knots.push_back(1.0);
  w.values.push_back(1.0);
  return w;
}

/// Per-instance sets of keypoint indices hidden for the whole sequence.
/// Disjoint mode rotates a shuffled block so that no index is hidden in
/// every instance.
template <class Rng>
std::vector<std::vector<int>> occlusion_sets(Rng& rng, int instances, int keypoints, double fraction,
                                             bool disjoint) {
  const int hidden = static_cast<int>(std::lround(fraction * keypoints));
  std::vector<std::vector<int>> sets(instances);
  if (hidden == 0) return sets;
  std::vector<int> perm(keypoints);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int n = 0; n < instances; ++n) {
    if (!disjoint) std::shuffle(perm.begin(), perm.end(), rng);
    const int offset = disjoint ? (n * keypoints) / instances : 0;
    for (int i = 0; i < hidden; ++i) sets[n].push_back(perm[(offset + i) % keypoints]);
    std::sort(sets[n].begin(), sets[n].end());
  }
  if (disjoint && instances > 1) {
    for (int k = 0; k < keypoints; ++k) {
      bool seen = false;
      for (const auto& s : sets) seen = seen || !std::binary_search(s.begin(), s.end(), k);
      if (!seen) throw ParseError("synth spec: occlusion fraction too large for disjoint coverage");
    }
  }
  return sets;
}

inline SynthScene render_instances(const SynthSpec& spec, const CanonicalMotion& canonical, const BodyModel& model) {
  spec.validate();
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  SynthScene scene;
  scene.canonical = canonical;
  const CameraIntrinsics k{spec.focal, spec.focal, 0.5 * spec.image_width, 0.5 * spec.image_height};
  const auto hidden = occlusion_sets(rng, spec.instances, model.keypoints, spec.occlusion_fraction,
                                     spec.occlusion_disjoint);
  // Detector noise has its own stream so that the noise level leaves the
  // motion, cameras and initial estimates untouched.
  std::mt19937_64 noise_rng(spec.seed ^ 0x2545f4914f6cdd1dULL);
  std::normal_distribution<double> pixel(0.0, 1.0);

  for (int n = 0; n < spec.instances; ++n) {
    const int frames = spec.frames_of(n);
    const PhaseWarp warp = random_warp(rng, spec.warp_knots, spec.warp_strength);
    std::vector<Mat3> offsets(model.joints);
    for (auto& o : offsets) o = axis_angle_to_matrix(detail::random_axis_angle(rng, spec.perturbation));
    std::vector<Mat3> arm_bias(model.joints, Mat3::Identity());
    for (int j = 0; j < model.joints; ++j) {
      if (detail::is_arm_joint(j, model.joints) && spec.init_arm_bias > 0.0) {
        arm_bias[j] = axis_angle_to_matrix(detail::random_axis_angle(rng, 1.0).normalized() * spec.init_arm_bias);
      }
    }
    const double az = (spec.camera_azimuths_deg.empty() ? spec.camera_azimuth_offset_deg + 360.0 * n / spec.instances
                                                        : spec.camera_azimuths_deg[n]) *
                      M_PI / 180.0;
    const Vec3 center(spec.camera_radius * std::sin(az), spec.camera_height, -spec.camera_radius * std::cos(az));
    const Camera cam = Camera::look_at(center, Vec3::Zero(), k, spec.image_width, spec.image_height);

    MotionSequence gt;
    Observation obs;
    obs.id = "inst" + std::to_string(n);
    obs.fps = spec.fps;
    obs.width = spec.image_width;
    obs.height = spec.image_height;
    obs.intrinsics = k;
    obs.camera_init = cam;
    std::vector<Pose> initial;
    const Eigen::VectorXd times = normalized_times(frames, spec.time_convention);
    for (int t = 0; t < frames; ++t) {
      const double phase = warp(times(t));
      Pose p = canonical.at(phase);
      for (int j = 0; j < model.joints; ++j) {
        p.rotations[j] = matrix_to_rot6d(rot6d_to_matrix(p.rotations[j]) * offsets[j]);
      }
      const Points2 px = world_to_pixels(cam, regress_keypoints(model, forward_kinematics(model, p)));
      Keypoints2D kp(model.keypoints, 3);
      for (int i = 0; i < model.keypoints; ++i) {
        const double nx = spec.pixel_noise > 0.0 ? spec.pixel_noise * pixel(noise_rng) : 0.0;
        const double ny = spec.pixel_noise > 0.0 ? spec.pixel_noise * pixel(noise_rng) : 0.0;
        kp(i, 0) = px(i, 0) + nx;
        kp(i, 1) = px(i, 1) + ny;
        kp(i, 2) = std::binary_search(hidden[n].begin(), hidden[n].end(), i) ? 0.0 : 1.0;
      }
      obs.keypoints2d.push_back(kp);

      Pose init = p;
      for (int j = 0; j < model.joints; ++j) {
        const Mat3 noise = axis_angle_to_matrix(detail::gaussian_vec(rng, spec.init_rot_noise));
        init.rotations[j] = matrix_to_rot6d(rot6d_to_matrix(p.rotations[j]) * arm_bias[j] * noise);
      }
      init.root_trans += detail::gaussian_vec(rng, spec.init_trans_noise);
      initial.push_back(init);
      gt.poses.push_back(p);
      gt.phases.push_back(phase);
    }
    obs.initial_pose3d = std::move(initial);
    scene.observations.push_back(std::move(obs));
    scene.ground_truth.push_back(std::move(gt));
    scene.cameras.push_back(cam);
    scene.warps.push_back(warp);
  }
  return scene;
}

inline SynthScene generate_scene(const SynthSpec& spec, const BodyModel& model) {
  return render_instances(spec, generate_canonical(spec, model), model);
}

}  // namespace nemo
