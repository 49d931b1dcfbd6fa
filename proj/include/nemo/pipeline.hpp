#pragma once

// Loss assembly and the two-stage joint optimization over all instances.

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "nemo/ad/optim.hpp"
#include "nemo/body.hpp"
#include "nemo/field.hpp"
#include "nemo/scene.hpp"

namespace nemo {

/// Per frame: K rows of (x px, y px, confidence).
using Keypoints2D = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct Observation {
  std::string id;
  std::vector<Keypoints2D> keypoints2d;
  double fps = 30.0;
  int width = 1000;
  int height = 1000;
  CameraIntrinsics intrinsics;
  std::optional<Camera> camera_init;
  std::optional<std::vector<Pose>> initial_pose3d;
  /// Independent 2D detections used to drop unreliable keypoints.
  std::optional<std::vector<Points2>> reference2d;

  int frames() const { return static_cast<int>(keypoints2d.size()); }
  int keypoints() const { return keypoints2d.empty() ? 0 : static_cast<int>(keypoints2d.front().rows()); }
};

struct FitConfig {
  int warmup_steps = 300;
  int main_steps = 2000;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double gm_sigma = 100.0;
  double pose_prior_weight = 0.0;
  double conf_threshold = 0.05;
  double drop_fraction_of_image = 0.10;
  std::uint64_t seed = 0;
  bool pin_cameras = false;
  int threads = 1;
  FieldConfig field;

  ad::AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
};

struct FitResult {
  ad::ParamStore params;
  std::vector<MotionSequence> motions;
  std::vector<Camera> cameras;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
  std::vector<double> residual_px;
};

/// Called after each optimizer step with (stage 1|2, 0-based step, loss).
using FitObserver = std::function<void(int, int, double)>;

/// Zeroes the confidence of keypoints farther than
/// drop_fraction * max(width, height) from the reference detections.
inline Observation clean_keypoints(const Observation& obs, const std::vector<Points2>& reference,
                                   double drop_fraction) {
  if (static_cast<int>(reference.size()) != obs.frames()) throw ShapeMismatch("clean_keypoints: frame count differs");
  const double threshold = drop_fraction * std::max(obs.width, obs.height);
  Observation out = obs;
  for (int t = 0; t < obs.frames(); ++t) {
    if (reference[t].rows() != obs.keypoints2d[t].rows()) {
      throw ShapeMismatch("clean_keypoints: keypoint count differs");
    }
    for (Eigen::Index k = 0; k < reference[t].rows(); ++k) {
      const double d = (obs.keypoints2d[t].row(k).head<2>() - reference[t].row(k)).norm();
      if (d > threshold) out.keypoints2d[t](k, 2) = 0.0;
    }
  }
  return out;
}

enum class Stage { Warmup = 1, Reprojection = 2 };

/// Precomputed targets for every instance, plus the loss terms.
class FitProblem {
 public:
  FitProblem(const BodyModel& model, std::vector<Observation> observations, FitConfig config)
      : model_(model), obs_(std::move(observations)), cfg_(std::move(config)) {
    if (obs_.empty()) throw NoValidKeypoints("fit needs at least one instance");
    for (std::size_t n = 0; n < obs_.size(); ++n) targets_.push_back(build_targets(obs_[n]));
  }

  int instances() const { return static_cast<int>(obs_.size()); }
  const Observation& observation(int n) const { return obs_.at(n); }
  const FitConfig& config() const { return cfg_; }
  const BodyModel& model() const { return model_; }

  bool has_initial_estimates() const {
    for (const auto& o : obs_) {
      if (!o.initial_pose3d) return false;
    }
    return true;
  }

  void require_initial_estimates() const {
    for (const auto& o : obs_) {
      if (!o.initial_pose3d) throw MissingInitialEstimate("instance '" + o.id + "' has no initial_pose3d");
    }
  }

  void require_valid_keypoints() const {
    for (std::size_t n = 0; n < obs_.size(); ++n) {
      if (targets_[n].valid == 0) {
        throw NoValidKeypoints("instance '" + obs_[n].id + "' has no keypoint above the confidence threshold");
      }
    }
  }

  /// Mean squared difference between the field's 6D rotations and the
  /// initial 3D estimate of instance n.
  ad::Var rotation_mse(int n, const FieldOutput& out) const {
    const auto& tgt = targets_.at(n);
    if (!tgt.rot6d) throw MissingInitialEstimate("instance '" + obs_[n].id + "' has no initial_pose3d");
    return ad::mean(ad::square(out.rot6d - *tgt.rot6d));
  }

  ad::Var stage1_term(ad::Tape& tape, const ad::ParamStore& store, int n) const {
    const InstanceMotion m = instance_motion(tape, store, cfg_.field, n, obs_[n].frames());
    return rotation_mse(n, m.out) * (1.0 / instances());
  }

  /// (1/T) sum_t sum_k conf * rho(residual), plus the optional pose prior.
  ad::Var stage2_term(ad::Tape& tape, const ad::ParamStore& store, int n) const {
    const auto& tgt = targets_.at(n);
    const InstanceProjection p = forward_instance(tape, store, cfg_.field, model_, n, obs_[n].frames());
    const ad::Var rho = ad::geman_mcclure(p.pixels - tgt.pixels, cfg_.gm_sigma);
    ad::Var term = ad::sum(rho * tgt.weights) * (1.0 / obs_[n].frames());
    if (cfg_.pose_prior_weight > 0.0) {
      term = term + rotation_mse(n, p.motion.out) * (cfg_.pose_prior_weight / instances());
    }
    return term;
  }

  ad::Var term(Stage s, ad::Tape& tape, const ad::ParamStore& store, int n) const {
    return s == Stage::Warmup ? stage1_term(tape, store, n) : stage2_term(tape, store, n);
  }

  /// Whole loss on one tape, accumulated in instance order.
  ad::Var loss(Stage s, ad::Tape& tape, const ad::ParamStore& store) const {
    ad::Var total = term(s, tape, store, 0);
    for (int n = 1; n < instances(); ++n) total = total + term(s, tape, store, n);
    return total;
  }

  /// Loss and gradients with one tape per instance; terms (and gradient
  /// maps) are summed in instance order regardless of thread count.
  std::pair<double, ad::GradientMap> value_and_gradients(Stage s, const ad::ParamStore& store) const {
    const int count = instances();
    std::vector<double> values(count);
    std::vector<ad::GradientMap> grads(count);
    std::vector<std::exception_ptr> errors(count);
    auto work = [&](int n) {
      try {
        ad::Tape tape;
        const ad::Var l = term(s, tape, store, n);
        tape.backward(l);
        values[n] = l.scalar();
        grads[n] = tape.gradients(store);
      } catch (...) {
        errors[n] = std::current_exception();
      }
    };
    const int workers = std::min(std::max(cfg_.threads, 1), count);
    if (workers <= 1) {
      for (int n = 0; n < count; ++n) work(n);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (int n = w; n < count; n += workers) work(n);
        });
      }
      for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    double total = values[0];
    ad::GradientMap sum = std::move(grads[0]);
    for (int n = 1; n < count; ++n) {
      total += values[n];
      for (auto& [name, g] : grads[n]) sum.at(name) += g;
    }
    return {total, std::move(sum)};
  }

  /// Mean pixel distance over keypoints that carry weight.
  double residual_px(const ad::ParamStore& store, int n) const {
    ad::Tape tape;
    const InstanceProjection p = forward_instance(tape, store, cfg_.field, model_, n, obs_[n].frames());
    const auto& tgt = targets_.at(n);
    const ad::Tensor d = (p.pixels.value() - tgt.pixels).rowwise().norm();
    double acc = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      if (tgt.weights(i, 0) > 0.0) {
        acc += d(i, 0);
        ++count;
      }
    }
    return count ? acc / count : 0.0;
  }

 private:
  struct Targets {
    ad::Tensor pixels;   // (K*T) x 2, keypoint-major
    ad::Tensor weights;  // (K*T) x 1
    std::optional<ad::Tensor> rot6d;  // T x 6J
    int valid = 0;
  };

  Targets build_targets(const Observation& o) const {
    const int frames = o.frames();
    const int kps = model_.keypoints;
    if (frames < 2) throw DimensionMismatch("instance '" + o.id + "' needs at least 2 frames");
    Targets t;
    t.pixels = ad::Tensor::Zero(kps * frames, 2);
    t.weights = ad::Tensor::Zero(kps * frames, 1);
    for (int f = 0; f < frames; ++f) {
      if (o.keypoints2d[f].rows() != kps) {
        throw DimensionMismatch("instance '" + o.id + "' keypoint count differs from body model");
      }
      for (int k = 0; k < kps; ++k) {
        const double conf = o.keypoints2d[f](k, 2);
        if (conf > cfg_.conf_threshold) {
          t.pixels.row(k * frames + f) = o.keypoints2d[f].row(k).head<2>();
          t.weights(k * frames + f, 0) = conf;
          ++t.valid;
        }
      }
    }
    if (o.initial_pose3d) {
      if (static_cast<int>(o.initial_pose3d->size()) != frames) {
        throw DimensionMismatch("instance '" + o.id + "' initial_pose3d length differs from keypoints");
      }
      ad::Tensor r(frames, 6 * model_.joints);
      for (int f = 0; f < frames; ++f) {
        const Pose p = (*o.initial_pose3d)[f].canonicalized();
        if (p.joints() != model_.joints) throw DimensionMismatch("initial_pose3d joint count mismatch");
        r.row(f) = p.to_vector().head(6 * model_.joints).transpose();
      }
      t.rot6d = std::move(r);
    }
    return t;
  }

  const BodyModel& model_;
  std::vector<Observation> obs_;
  FitConfig cfg_;
  std::vector<Targets> targets_;
};

/// Field, instance codes, phase nets and cameras for every observation.
inline ad::ParamStore init_params(const std::vector<Observation>& obs, const FitConfig& cfg) {
  ad::ParamStore store;
  std::mt19937_64 rng(cfg.seed);
  init_field(store, cfg.field, rng);
  for (int n = 0; n < static_cast<int>(obs.size()); ++n) {
    init_instance(store, n, cfg.field, rng);
    const Camera cam = obs[n].camera_init ? *obs[n].camera_init
                                          : Camera::default_placement(obs[n].intrinsics, obs[n].width, obs[n].height);
    Camera placed = cam;
    placed.intrinsics = obs[n].intrinsics;
    add_camera(store, n, placed, !cfg.pin_cameras);
  }
  return store;
}

/// Warmup: fit the rotation output to the initial 3D estimates. Translation
/// parameters and cameras are held fixed.
inline std::vector<double> stage1_warmup(ad::ParamStore& store, const FitProblem& problem,
                                         const FitObserver& observer = {}) {
  problem.require_initial_estimates();
  const FitConfig& cfg = problem.config();
  std::vector<std::string> frozen = translation_params(cfg.field);
  for (int n = 0; n < problem.instances(); ++n) {
    frozen.push_back(pname::cam_rot6d(n));
    frozen.push_back(pname::cam_trans(n));
  }
  std::vector<std::pair<std::string, bool>> saved;
  for (const auto& name : frozen) {
    saved.emplace_back(name, store.learnable(name));
    store.set_learnable(name, false);
  }
  std::vector<double> curve;
  curve.reserve(cfg.warmup_steps);
  try {
    for (int step = 0; step < cfg.warmup_steps; ++step) {
      auto [loss, grads] = problem.value_and_gradients(Stage::Warmup, store);
      curve.push_back(loss);
      ad::adam_step(store, grads, cfg.adam());
      if (observer) observer(1, step, loss);
    }
  } catch (...) {
    for (const auto& [name, on] : saved) store.set_learnable(name, on);
    throw;
  }
  for (const auto& [name, on] : saved) store.set_learnable(name, on);
  return curve;
}

inline FitResult collect_result(ad::ParamStore store, const FitProblem& problem) {
  FitResult r;
  for (int n = 0; n < problem.instances(); ++n) {
    const Observation& o = problem.observation(n);
    r.motions.push_back(motion_sample(store, problem.config().field, n, o.frames()));
    r.cameras.push_back(camera_from_store(store, n, o.width, o.height));
    r.residual_px.push_back(problem.residual_px(store, n));
  }
  r.params = std::move(store);
  return r;
}

/// Main stage: every learnable parameter against the robust reprojection loss.
inline FitResult stage2_fit(ad::ParamStore& store, const FitProblem& problem, const FitObserver& observer = {}) {
  problem.require_valid_keypoints();
  const FitConfig& cfg = problem.config();
  std::vector<double> curve;
  curve.reserve(cfg.main_steps);
  for (int step = 0; step < cfg.main_steps; ++step) {
    auto [loss, grads] = problem.value_and_gradients(Stage::Reprojection, store);
    curve.push_back(loss);
    ad::adam_step(store, grads, cfg.adam());
    if (observer) observer(2, step, loss);
  }
  FitResult r = collect_result(store, problem);
  r.stage2_loss = std::move(curve);
  return r;
}

/// Keypoint cleaning, initialization, warmup, then the main stage. Each
/// stage starts with fresh optimizer state.
inline FitResult fit(const std::vector<Observation>& dataset, const BodyModel& model, const FitConfig& cfg,
                     const FitObserver& observer = {}) {
  std::vector<Observation> obs;
  for (const auto& o : dataset) {
    obs.push_back(o.reference2d ? clean_keypoints(o, *o.reference2d, cfg.drop_fraction_of_image) : o);
  }
  const FitProblem problem(model, obs, cfg);
  problem.require_valid_keypoints();
  if (cfg.warmup_steps > 0 || cfg.pose_prior_weight > 0.0) problem.require_initial_estimates();

  ad::ParamStore store = init_params(obs, cfg);
  std::vector<double> warm;
  if (cfg.warmup_steps > 0) warm = stage1_warmup(store, problem, observer);
  store.reset_optimizer();
  FitResult r = stage2_fit(store, problem, observer);
  r.stage1_loss = std::move(warm);
  return r;
}

/// Independent single-instance fits (the per-video baseline). Parameters of
/// fit n are stored under the "fit<n>/" prefix.
inline FitResult fit_independently(const std::vector<Observation>& dataset, const BodyModel& model,
                                   const FitConfig& cfg, const FitObserver& observer = {}) {
  FitResult all;
  for (std::size_t n = 0; n < dataset.size(); ++n) {
    FitResult one = fit({dataset[n]}, model, cfg, observer);
    all.motions.push_back(std::move(one.motions.front()));
    all.cameras.push_back(one.cameras.front());
    all.residual_px.push_back(one.residual_px.front());
    if (n == 0) {
      all.stage1_loss = one.stage1_loss;
      all.stage2_loss = one.stage2_loss;
    } else {
      for (std::size_t i = 0; i < all.stage1_loss.size(); ++i) all.stage1_loss[i] += one.stage1_loss[i];
      for (std::size_t i = 0; i < all.stage2_loss.size(); ++i) all.stage2_loss[i] += one.stage2_loss[i];
    }
    for (const auto& e : one.params.entries()) {
      all.params.add("fit" + std::to_string(n) + "/" + e.name, e.value, e.learnable);
    }
  }
  return all;
}

}  // namespace nemo
