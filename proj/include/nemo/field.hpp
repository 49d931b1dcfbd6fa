#pragma once

// The motion field: per-instance monotone phase networks, a shared MLP from
// [phase; instance code] to joint rotations + root translation, and the
// learnable instance codes.

#include <random>
#include <string>
#include <vector>

#include "nemo/ad/geom.hpp"
#include "nemo/ad/ops.hpp"
#include "nemo/ad/params.hpp"
#include "nemo/body.hpp"

namespace nemo {

inline constexpr double kPhaseEps = 1e-10;

enum class Activation { Softplus, Relu };

/// How frame t (1-based) of a T-frame sequence maps to normalized time.
enum class TimeConvention {
  TOverT,     // t / T
  ZeroBased,  // (t - 1) / (T - 1)
};

struct FieldConfig {
  int joints = 24;
  int code_dim = 5;
  int hidden_layers = 3;
  int hidden_units = 1000;
  int phase_sigmoids = 100;
  Activation activation = Activation::Softplus;
  double softplus_beta = 40.0;  // softplus(beta x) / beta; larger is closer to relu
  bool separate_translation_net = false;
  TimeConvention time_convention = TimeConvention::TOverT;
  double output_init_scale = 1e-4;

  int output_rot_dim() const { return joints * 6; }
};

namespace pname {
inline std::string layer_w(int i) { return "field/L" + std::to_string(i) + "/W"; }
inline std::string layer_b(int i) { return "field/L" + std::to_string(i) + "/b"; }
inline std::string trans_layer_w(int i) { return "field/trans_L" + std::to_string(i) + "/W"; }
inline std::string trans_layer_b(int i) { return "field/trans_L" + std::to_string(i) + "/b"; }
inline const std::string rot_head_w = "field/rot_head/W";
inline const std::string rot_head_b = "field/rot_head/b";
inline const std::string trans_head_w = "field/trans_head/W";
inline const std::string trans_head_b = "field/trans_head/b";
inline std::string instance(int n, const char* what) { return "inst" + std::to_string(n) + "/" + what; }
inline std::string code(int n) { return instance(n, "code"); }
inline std::string phase_a(int n) { return instance(n, "phase_a"); }
inline std::string phase_b(int n) { return instance(n, "phase_b"); }
inline std::string cam_rot6d(int n) { return instance(n, "cam_rot6d"); }
inline std::string cam_trans(int n) { return instance(n, "cam_trans"); }
inline std::string cam_intrinsics(int n) { return instance(n, "cam_intrinsics"); }
}  // namespace pname

/// Names of the parameters that only influence root translation.
inline std::vector<std::string> translation_params(const FieldConfig& cfg) {
  std::vector<std::string> out = {pname::trans_head_w, pname::trans_head_b};
  if (cfg.separate_translation_net) {
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      out.push_back(pname::trans_layer_w(i));
      out.push_back(pname::trans_layer_b(i));
    }
  }
  return out;
}

inline Eigen::VectorXd normalized_times(int frames, TimeConvention conv) {
  Eigen::VectorXd t(frames);
  for (int i = 0; i < frames; ++i) {
    t(i) = conv == TimeConvention::TOverT ? static_cast<double>(i + 1) / frames
                                          : (frames > 1 ? static_cast<double>(i) / (frames - 1) : 0.0);
  }
  return t;
}

// --- phase network ---

struct PhaseNetParams {
  Eigen::RowVectorXd a;  // raw scales
  Eigen::RowVectorXd b;  // raw shifts
};

namespace detail {
inline double phase_g(const PhaseNetParams& p, double t) {
  double acc = 0.0;
  for (Eigen::Index k = 0; k < p.a.size(); ++k) {
    acc += ad::detail::sigmoid(std::max(p.a(k), 0.0) * (t - std::max(p.b(k), 0.0)));
  }
  return acc / static_cast<double>(p.a.size());
}
}  // namespace detail

/// phi(t) = (g(t) - g(0)) / (g(1) - g(0)) with g the mean of K increasing
/// sigmoids.
inline double phase_eval(const PhaseNetParams& p, double t) {
  if (p.a.size() < 1 || p.a.size() != p.b.size()) throw ShapeMismatch("phase net needs K >= 1 matching a/b");
  const double g0 = detail::phase_g(p, 0.0);
  const double g1 = detail::phase_g(p, 1.0);
  if (!(g1 - g0 > kPhaseEps)) throw DegeneratePhase("phase net range g(1) - g(0) is zero");
  return (detail::phase_g(p, t) - g0) / (g1 - g0);
}

/// Differentiable phase for a column of normalized times; a, b are 1 x K.
inline ad::Var phase_curve(const ad::Var& a, const ad::Var& b, const Eigen::VectorXd& times) {
  ad::Tape& tape = *a.tape();
  Eigen::MatrixXd t(times.size() + 2, 1);
  t(0, 0) = 0.0;
  t(1, 0) = 1.0;
  t.bottomRows(times.size()) = times;
  const ad::Var g = ad::row_means(ad::sigmoid((tape.constant(t) - ad::relu(b)) * ad::relu(a)));
  const ad::Var g0 = ad::slice_rows(g, 0, 1);
  const ad::Var range = ad::slice_rows(g, 1, 1) - g0;
  if (!(range.scalar() > kPhaseEps)) throw DegeneratePhase("phase net range g(1) - g(0) is zero");
  return (ad::slice_rows(g, 2, times.size()) - g0) / range;
}

inline PhaseNetParams phase_params(const ad::ParamStore& store, int n) {
  return {store.value(pname::phase_a(n)).row(0), store.value(pname::phase_b(n)).row(0)};
}

// --- initialization ---

inline void init_field(ad::ParamStore& store, const FieldConfig& cfg, std::mt19937_64& rng) {
  auto uniform = [&](int rows, int cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    ad::Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
    return t;
  };
  auto add_trunk = [&](auto layer_w, auto layer_b) {
    int in = 1 + cfg.code_dim;
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      store.add(layer_w(i), uniform(in, cfg.hidden_units, bound));
      store.add(layer_b(i), uniform(1, cfg.hidden_units, bound));
      in = cfg.hidden_units;
    }
    return in;
  };
  const int width = add_trunk(pname::layer_w, pname::layer_b);
  store.add(pname::rot_head_w, uniform(width, cfg.output_rot_dim(), cfg.output_init_scale));
  store.add(pname::rot_head_b, uniform(1, cfg.output_rot_dim(), cfg.output_init_scale));
  const int trans_width =
      cfg.separate_translation_net ? add_trunk(pname::trans_layer_w, pname::trans_layer_b) : width;
  store.add(pname::trans_head_w, uniform(trans_width, 3, cfg.output_init_scale));
  store.add(pname::trans_head_b, uniform(1, 3, cfg.output_init_scale));
}

inline void init_instance(ad::ParamStore& store, int n, const FieldConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> code(-0.1, 0.1);
  std::uniform_real_distribution<double> slope(5.0, 15.0);
  std::uniform_real_distribution<double> knot(0.0, 1.0);
  ad::Tensor z(1, cfg.code_dim), a(1, cfg.phase_sigmoids), b(1, cfg.phase_sigmoids);
  for (int i = 0; i < cfg.code_dim; ++i) z(0, i) = code(rng);
  for (int k = 0; k < cfg.phase_sigmoids; ++k) a(0, k) = slope(rng);
  for (int k = 0; k < cfg.phase_sigmoids; ++k) b(0, k) = knot(rng);
  store.add(pname::code(n), z);
  store.add(pname::phase_a(n), a);
  store.add(pname::phase_b(n), b);
}

// --- differentiable field ---

struct FieldOutput {
  ad::Var rot6d;  // B x 6J, identity template already added
  ad::Var trans;  // B x 3
};

inline ad::Var activate(const ad::Var& x, Activation act, double beta = 1.0) {
  if (act == Activation::Relu) return ad::relu(x);
  return beta == 1.0 ? ad::softplus(x) : ad::softplus(x * beta) * (1.0 / beta);
}

inline FieldOutput field_forward(ad::Tape& tape, const ad::ParamStore& store, const FieldConfig& cfg,
                                 const ad::Var& input) {
  if (input.cols() != 1 + cfg.code_dim) throw ShapeMismatch("field input must have 1 + code_dim columns");
  auto trunk = [&](auto layer_w, auto layer_b) {
    ad::Var h = input;
    for (int i = 0; i < cfg.hidden_layers; ++i) {
      h = activate(ad::matmul(h, tape.parameter(store, layer_w(i))) + tape.parameter(store, layer_b(i)),
                   cfg.activation, cfg.softplus_beta);
    }
    return h;
  };
  const ad::Var h = trunk(pname::layer_w, pname::layer_b);
  ad::Tensor templ(1, cfg.output_rot_dim());
  for (int j = 0; j < cfg.joints; ++j) templ.block<1, 6>(0, 6 * j) << 1, 0, 0, 0, 1, 0;
  FieldOutput out;
  out.rot6d = ad::matmul(h, tape.parameter(store, pname::rot_head_w)) + tape.parameter(store, pname::rot_head_b) +
              templ;
  const ad::Var ht = cfg.separate_translation_net ? trunk(pname::trans_layer_w, pname::trans_layer_b) : h;
  out.trans = ad::matmul(ht, tape.parameter(store, pname::trans_head_w)) + tape.parameter(store, pname::trans_head_b);
  return out;
}

/// Field input rows [phi_i, z] for a column of phases and a 1 x Nz code.
inline ad::Var field_input(const ad::Var& phases, const ad::Var& code) {
  return ad::concat_cols({phases, ad::broadcast_to(code, phases.rows(), code.cols())});
}

struct InstanceMotion {
  ad::Var phases;  // T x 1
  FieldOutput out;
};

inline InstanceMotion instance_motion(ad::Tape& tape, const ad::ParamStore& store, const FieldConfig& cfg, int n,
                                      int frames) {
  InstanceMotion m;
  m.phases = phase_curve(tape.parameter(store, pname::phase_a(n)), tape.parameter(store, pname::phase_b(n)),
                         normalized_times(frames, cfg.time_convention));
  m.out = field_forward(tape, store, cfg, field_input(m.phases, tape.parameter(store, pname::code(n))));
  return m;
}

/// Per-joint local rotations from the field's 6D block.
inline std::vector<ad::Rotation> joint_rotations(const ad::Var& rot6d, int joints) {
  std::vector<ad::Rotation> out;
  out.reserve(joints);
  for (int j = 0; j < joints; ++j) out.push_back(ad::rot6d_to_rotation(ad::slice_cols(rot6d, 6 * j, 6)));
  return out;
}

// --- plain evaluation ---

namespace detail {
inline std::vector<Pose> poses_from_output(const FieldOutput& out, int joints) {
  const ad::Tensor& r = out.rot6d.value();
  const ad::Tensor& t = out.trans.value();
  std::vector<Pose> poses(r.rows(), Pose::identity(joints));
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    for (int j = 0; j < joints; ++j) {
      poses[i].rotations[j].a1 = r.block<1, 3>(i, 6 * j).transpose();
      poses[i].rotations[j].a2 = r.block<1, 3>(i, 6 * j + 3).transpose();
    }
    poses[i].root_trans = t.row(i).transpose();
  }
  return poses;
}
}  // namespace detail

/// Raw field output at (phi, z); rotations are not re-orthonormalized.
inline Pose field_eval(const ad::ParamStore& store, const FieldConfig& cfg, double phi, const Eigen::VectorXd& z) {
  ad::Tape tape;
  ad::Tensor in(1, 1 + cfg.code_dim);
  in(0, 0) = phi;
  in.block(0, 1, 1, cfg.code_dim) = z.transpose();
  return detail::poses_from_output(field_forward(tape, store, cfg, tape.constant(in)), cfg.joints).front();
}

/// Field output at each of the given phases for a fixed code.
inline std::vector<Pose> field_eval_batch(const ad::ParamStore& store, const FieldConfig& cfg,
                                          const Eigen::VectorXd& phases, const Eigen::VectorXd& z) {
  ad::Tape tape;
  ad::Tensor in(phases.size(), 1 + cfg.code_dim);
  in.col(0) = phases;
  in.rightCols(cfg.code_dim) = z.transpose().replicate(phases.size(), 1);
  return detail::poses_from_output(field_forward(tape, store, cfg, tape.constant(in)), cfg.joints);
}

/// Samples instance n at frames 1..T.
inline MotionSequence motion_sample(const ad::ParamStore& store, const FieldConfig& cfg, int n, int frames) {
  if (frames < 2) throw DimensionMismatch("motion_sample needs T >= 2");
  ad::Tape tape;
  const InstanceMotion m = instance_motion(tape, store, cfg, n, frames);
  MotionSequence seq;
  seq.poses = detail::poses_from_output(m.out, cfg.joints);
  const ad::Tensor& ph = m.phases.value();
  seq.phases.assign(ph.data(), ph.data() + ph.size());
  return seq;
}

}  // namespace nemo
