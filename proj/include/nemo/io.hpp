#pragma once

// File formats: body model, dataset, motion, fit config, synth spec, eval
// report (all JSON) and the binary checkpoint.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nemo/body.hpp"
#include "nemo/metrics.hpp"
#include "nemo/pipeline.hpp"
#include "nemo/scene.hpp"
#include "nemo/synth.hpp"

namespace nemo::io {

using json = nlohmann::json;

inline constexpr const char* kBuiltinModel = "builtin:humanoid24";

// --- plumbing ---

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temp file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline json load_json(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

/// FNV-1a, 64 bit, as 16 hex digits.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Wraps json access so malformed documents surface as ParseError.
template <class F>
auto parsing(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json points_json(const Points3& p) {
  json out = json::array();
  for (Eigen::Index i = 0; i < p.rows(); ++i) out.push_back({p(i, 0), p(i, 1), p(i, 2)});
  return out;
}

inline Points3 json_points(const json& j) {
  Points3 p(static_cast<Eigen::Index>(j.size()), 3);
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != 3) throw ParseError("expected [x, y, z] triples");
    for (int c = 0; c < 3; ++c) p(static_cast<Eigen::Index>(i), c) = j[i][c].get<double>();
  }
  return p;
}

inline json sparse_json(int rows, const std::vector<SparseEntry>& entries) {
  json e = json::array();
  for (const auto& s : entries) e.push_back({s.row, s.col, s.weight});
  return {{"rows", rows}, {"entries", e}};
}

inline std::vector<SparseEntry> json_sparse(const json& j, int& rows) {
  rows = j.at("rows").get<int>();
  std::vector<SparseEntry> out;
  for (const auto& e : j.at("entries")) {
    if (e.size() != 3) throw ParseError("sparse entries must be [row, col, weight]");
    out.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
  }
  return out;
}

// --- body model ---

inline json model_to_json(const BodyModel& m) {
  json j;
  j["joints"] = m.joints;
  j["parents"] = m.parents;
  j["rest_offsets"] = points_json(m.rest_offsets);
  j["keypoint_regressor"] = sparse_json(m.keypoints, m.keypoint_regressor);
  if (m.mesh) {
    json w = json::array();
    for (Eigen::Index v = 0; v < m.mesh->weights.rows(); ++v) {
      for (Eigen::Index k = 0; k < m.mesh->weights.cols(); ++k) {
        if (m.mesh->weights(v, k) != 0.0) w.push_back({v, k, m.mesh->weights(v, k)});
      }
    }
    j["mesh"] = {{"vertices", points_json(m.mesh->rest_vertices)}, {"skinning_weights", w}};
    if (!m.vertex_regressor.empty()) {
      j["mesh"]["vertex_regressor"] = sparse_json(m.vertex_keypoints, m.vertex_regressor);
    }
  }
  return j;
}

inline BodyModel model_from_json(const json& j) {
  BodyModel m = parsing("body model", [&] {
    BodyModel b;
    b.joints = j.at("joints").get<int>();
    b.parents = j.at("parents").get<std::vector<int>>();
    b.rest_offsets = json_points(j.at("rest_offsets"));
    b.keypoint_regressor = json_sparse(j.at("keypoint_regressor"), b.keypoints);
    if (j.contains("mesh") && !j["mesh"].is_null()) {
      const json& mj = j["mesh"];
      SkinnedMesh mesh;
      mesh.rest_vertices = json_points(mj.at("vertices"));
      mesh.weights = Eigen::MatrixXd::Zero(mesh.rest_vertices.rows(), b.joints);
      for (const auto& e : mj.at("skinning_weights")) {
        const int v = e.at(0).get<int>(), k = e.at(1).get<int>();
        if (v < 0 || v >= mesh.rest_vertices.rows() || k < 0 || k >= b.joints) {
          throw ParseError("body model: skinning weight index out of range");
        }
        mesh.weights(v, k) = e.at(2).get<double>();
      }
      if (mj.contains("vertex_regressor")) b.vertex_regressor = json_sparse(mj["vertex_regressor"], b.vertex_keypoints);
      b.mesh = std::move(mesh);
    }
    return b;
  });
  m.validate();
  return m;
}

struct LoadedModel {
  BodyModel model;
  std::string path;
  std::string hash;
};

inline std::string model_hash(const BodyModel& m) { return content_hash(model_to_json(m).dump()); }

/// `builtin:humanoid24` or a JSON file path.
inline LoadedModel load_model(const std::string& path) {
  LoadedModel out;
  out.path = path;
  out.model = path == kBuiltinModel ? default_humanoid() : model_from_json(load_json(path));
  out.hash = model_hash(out.model);
  return out;
}

// --- poses, cameras ---

inline json pose_json(const Pose& p) { return vec_json(p.canonicalized().to_vector()); }

inline Pose json_pose(const json& j, int joints) { return Pose::from_vector(json_vec(j), joints); }

inline json extrinsics_json(const Camera& c) {
  const auto r = matrix_to_rot6d(c.rotation_matrix()).to_array();
  return {{"rot6d", std::vector<double>(r.begin(), r.end())},
          {"trans", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

inline void apply_extrinsics(const json& j, Camera& c) {
  const auto r = j.at("rot6d").get<std::vector<double>>();
  const auto t = j.at("trans").get<std::vector<double>>();
  if (r.size() != 6 || t.size() != 3) throw ParseError("extrinsics need rot6d[6] and trans[3]");
  c.rotation = Rot6D::from_array(std::span<const double, 6>(r.data(), 6));
  c.translation = Vec3(t[0], t[1], t[2]);
  rot6d_to_matrix(c.rotation);
}

inline json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}};
}

inline CameraIntrinsics json_intrinsics(const json& j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>()};
  k.validate();
  return k;
}

inline json camera_json(const Camera& c) {
  json j = extrinsics_json(c);
  j["intrinsics"] = intrinsics_json(c.intrinsics);
  j["image"] = {{"width", c.width}, {"height", c.height}};
  return j;
}

// --- dataset ---

struct Dataset {
  std::string action;
  std::string layout_name = "penn13";
  int layout_count = 13;
  std::vector<Observation> instances;
};

inline json dataset_to_json(const Dataset& d) {
  json inst = json::array();
  for (const auto& o : d.instances) {
    json kp = json::array();
    for (const auto& f : o.keypoints2d) kp.push_back(points_json(f));
    json j = {{"id", o.id},
              {"fps", o.fps},
              {"image", {{"width", o.width}, {"height", o.height}}},
              {"intrinsics", intrinsics_json(o.intrinsics)},
              {"keypoints2d", kp}};
    if (o.camera_init) j["extrinsics_init"] = extrinsics_json(*o.camera_init);
    if (o.initial_pose3d) {
      json poses = json::array();
      for (const auto& p : *o.initial_pose3d) poses.push_back(pose_json(p));
      j["initial_pose3d"] = poses;
    }
    if (o.reference2d) {
      json ref = json::array();
      for (const auto& f : *o.reference2d) {
        json frame = json::array();
        for (Eigen::Index k = 0; k < f.rows(); ++k) frame.push_back({f(k, 0), f(k, 1)});
        ref.push_back(frame);
      }
      j["reference2d"] = ref;
    }
    inst.push_back(j);
  }
  return {{"action", d.action}, {"keypoint_layout", {{"name", d.layout_name}, {"count", d.layout_count}}},
          {"instances", inst}};
}

inline Dataset dataset_from_json(const json& j, int joints) {
  return parsing("dataset", [&] {
    Dataset d;
    d.action = j.value("action", std::string());
    d.layout_name = j.at("keypoint_layout").at("name").get<std::string>();
    d.layout_count = j.at("keypoint_layout").at("count").get<int>();
    for (const auto& ij : j.at("instances")) {
      Observation o;
      o.id = ij.at("id").get<std::string>();
      o.fps = ij.at("fps").get<double>();
      o.width = ij.at("image").at("width").get<int>();
      o.height = ij.at("image").at("height").get<int>();
      o.intrinsics = json_intrinsics(ij.at("intrinsics"));
      for (const auto& f : ij.at("keypoints2d")) {
        Points3 p = json_points(f);
        if (p.rows() != d.layout_count) throw ParseError("instance " + o.id + ": keypoint count differs from layout");
        for (Eigen::Index k = 0; k < p.rows(); ++k) {
          if (!(p(k, 2) >= 0.0 && p(k, 2) <= 1.0)) throw ParseError("instance " + o.id + ": confidence outside [0, 1]");
        }
        o.keypoints2d.push_back(p);
      }
      if (o.frames() < 2) throw ParseError("instance " + o.id + ": needs at least 2 frames");
      if (ij.contains("extrinsics_init")) {
        Camera c;
        c.intrinsics = o.intrinsics;
        c.width = o.width;
        c.height = o.height;
        apply_extrinsics(ij["extrinsics_init"], c);
        o.camera_init = c;
      }
      if (ij.contains("initial_pose3d")) {
        std::vector<Pose> poses;
        for (const auto& p : ij["initial_pose3d"]) poses.push_back(json_pose(p, joints));
        if (static_cast<int>(poses.size()) != o.frames()) throw ParseError("instance " + o.id + ": initial_pose3d length");
        o.initial_pose3d = std::move(poses);
      }
      if (ij.contains("reference2d")) {
        std::vector<Points2> ref;
        for (const auto& f : ij["reference2d"]) {
          Points2 p(static_cast<Eigen::Index>(f.size()), 2);
          for (std::size_t k = 0; k < f.size(); ++k) {
            p(static_cast<Eigen::Index>(k), 0) = f[k].at(0).get<double>();
            p(static_cast<Eigen::Index>(k), 1) = f[k].at(1).get<double>();
          }
          ref.push_back(p);
        }
        o.reference2d = std::move(ref);
      }
      d.instances.push_back(std::move(o));
    }
    if (d.instances.empty()) throw ParseError("dataset has no instances");
    return d;
  });
}

// --- motion file ---

struct MotionInstance {
  std::string id;
  std::vector<Pose> poses;
  std::vector<double> phases;
  Camera camera;
};

struct MotionFile {
  std::string model_path;
  std::string model_hash;
  std::vector<MotionInstance> instances;
  std::vector<Pose> canonical;  // 101 samples at phase 0.00 .. 1.00
};

inline Eigen::VectorXd canonical_phases() { return Eigen::VectorXd::LinSpaced(101, 0.0, 1.0); }

inline json motion_to_json(const MotionFile& m) {
  json inst = json::array();
  for (const auto& i : m.instances) {
    json poses = json::array();
    for (const auto& p : i.poses) poses.push_back(pose_json(p));
    inst.push_back({{"id", i.id},
                    {"T", static_cast<int>(i.poses.size())},
                    {"poses", poses},
                    {"phases", i.phases},
                    {"camera", extrinsics_json(i.camera)}});
  }
  json canon = json::array();
  for (const auto& p : m.canonical) canon.push_back(pose_json(p));
  return {{"model", {{"path", m.model_path}, {"hash", m.model_hash}}}, {"instances", inst}, {"canonical", canon}};
}

inline MotionFile motion_from_json(const json& j, int joints) {
  return parsing("motion file", [&] {
    MotionFile m;
    m.model_path = j.at("model").at("path").get<std::string>();
    m.model_hash = j.at("model").at("hash").get<std::string>();
    for (const auto& ij : j.at("instances")) {
      MotionInstance i;
      i.id = ij.at("id").get<std::string>();
      for (const auto& p : ij.at("poses")) i.poses.push_back(json_pose(p, joints));
      i.phases = ij.at("phases").get<std::vector<double>>();
      if (static_cast<int>(i.poses.size()) != ij.at("T").get<int>() || i.phases.size() != i.poses.size()) {
        throw ParseError("motion instance " + i.id + ": pose/phase counts differ from T");
      }
      apply_extrinsics(ij.at("camera"), i.camera);
      m.instances.push_back(std::move(i));
    }
    for (const auto& p : j.at("canonical")) m.canonical.push_back(json_pose(p, joints));
    return m;
  });
}

/// Reads only the model reference of a motion file.
inline std::pair<std::string, std::string> motion_model_ref(const json& j) {
  return parsing("motion file", [&] {
    return std::make_pair(j.at("model").at("path").get<std::string>(), j.at("model").at("hash").get<std::string>());
  });
}

// --- configs ---

inline json fit_config_to_json(const FitConfig& c) {
  return {{"warmup_steps", c.warmup_steps},
          {"main_steps", c.main_steps},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"gm_sigma", c.gm_sigma},
          {"pose_prior_weight", c.pose_prior_weight},
          {"conf_threshold", c.conf_threshold},
          {"drop_fraction_of_image", c.drop_fraction_of_image},
          {"seed", c.seed},
          {"pin_cameras", c.pin_cameras},
          {"threads", c.threads},
          {"hidden_layers", c.field.hidden_layers},
          {"hidden_units", c.field.hidden_units},
          {"phase_sigmoids", c.field.phase_sigmoids},
          {"code_dim", c.field.code_dim},
          {"activation", c.field.activation == Activation::Softplus ? "softplus" : "relu"},
          {"softplus_beta", c.field.softplus_beta},
          {"separate_translation_net", c.field.separate_translation_net},
          {"time_convention", c.field.time_convention == TimeConvention::TOverT ? "t_over_T" : "zero_based"},
          {"output_init_scale", c.field.output_init_scale}};
}

inline TimeConvention parse_time_convention(const std::string& s) {
  if (s == "t_over_T") return TimeConvention::TOverT;
  if (s == "zero_based") return TimeConvention::ZeroBased;
  throw ParseError("time_convention must be t_over_T or zero_based");
}

/// Unknown keys are rejected so typos do not silently fall back to defaults.
inline FitConfig fit_config_from_json(const json& j, FitConfig c = {}) {
  static const std::vector<std::string> known = {
      "warmup_steps", "main_steps", "lr", "beta1", "beta2", "eps", "gm_sigma", "pose_prior_weight",
      "conf_threshold", "drop_fraction_of_image", "seed", "pin_cameras", "threads", "hidden_layers",
      "hidden_units", "phase_sigmoids", "code_dim", "activation", "softplus_beta", "separate_translation_net", "time_convention",
      "output_init_scale"};
  if (!j.is_object()) throw ParseError("fit config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ParseError("fit config: unknown key '" + it.key() + "'");
    }
  }
  parsing("fit config", [&] {
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.main_steps = j.value("main_steps", c.main_steps);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.gm_sigma = j.value("gm_sigma", c.gm_sigma);
    c.pose_prior_weight = j.value("pose_prior_weight", c.pose_prior_weight);
    c.conf_threshold = j.value("conf_threshold", c.conf_threshold);
    c.drop_fraction_of_image = j.value("drop_fraction_of_image", c.drop_fraction_of_image);
    c.seed = j.value("seed", c.seed);
    c.pin_cameras = j.value("pin_cameras", c.pin_cameras);
    c.threads = j.value("threads", c.threads);
    c.field.hidden_layers = j.value("hidden_layers", c.field.hidden_layers);
    c.field.hidden_units = j.value("hidden_units", c.field.hidden_units);
    c.field.phase_sigmoids = j.value("phase_sigmoids", c.field.phase_sigmoids);
    c.field.code_dim = j.value("code_dim", c.field.code_dim);
    if (j.contains("activation")) {
      const auto a = j["activation"].get<std::string>();
      if (a != "softplus" && a != "relu") throw ParseError("activation must be softplus or relu");
      c.field.activation = a == "softplus" ? Activation::Softplus : Activation::Relu;
    }
    c.field.softplus_beta = j.value("softplus_beta", c.field.softplus_beta);
    c.field.separate_translation_net = j.value("separate_translation_net", c.field.separate_translation_net);
    if (j.contains("time_convention")) c.field.time_convention = parse_time_convention(j["time_convention"]);
    c.field.output_init_scale = j.value("output_init_scale", c.field.output_init_scale);
    return 0;
  });
  if (c.warmup_steps < 0 || c.main_steps < 0) throw ParseError("fit config: steps must be >= 0");
  if (!(c.lr > 0.0)) throw ParseError("fit config: lr must be > 0");
  if (!(c.gm_sigma > 0.0)) throw ParseError("fit config: gm_sigma must be > 0");
  if (!(c.field.softplus_beta > 0.0)) throw ParseError("fit config: softplus_beta must be > 0");
  if (c.field.hidden_layers < 1 || c.field.hidden_units < 1 || c.field.phase_sigmoids < 1 || c.field.code_dim < 0) {
    throw ParseError("fit config: network sizes must be positive");
  }
  return c;
}

inline json synth_spec_to_json(const SynthSpec& s) {
  return {{"action", s.action},
          {"seed", s.seed},
          {"instances", s.instances},
          {"frames", s.frames},
          {"fps", s.fps},
          {"keyframes", s.keyframes},
          {"motion_amplitude", s.motion_amplitude},
          {"root_amplitude", s.root_amplitude},
          {"warp_strength", s.warp_strength},
          {"warp_knots", s.warp_knots},
          {"perturbation", s.perturbation},
          {"camera_radius", s.camera_radius},
          {"camera_height", s.camera_height},
          {"camera_azimuths_deg", s.camera_azimuths_deg},
          {"camera_azimuth_offset_deg", s.camera_azimuth_offset_deg},
          {"image_width", s.image_width},
          {"image_height", s.image_height},
          {"focal", s.focal},
          {"pixel_noise", s.pixel_noise},
          {"occlusion_fraction", s.occlusion_fraction},
          {"occlusion_disjoint", s.occlusion_disjoint},
          {"init_rot_noise", s.init_rot_noise},
          {"init_arm_bias", s.init_arm_bias},
          {"init_trans_noise", s.init_trans_noise},
          {"time_convention", s.time_convention == TimeConvention::TOverT ? "t_over_T" : "zero_based"}};
}

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s = parsing("synth spec", [&] {
    if (!j.is_object()) throw ParseError("synth spec must be a JSON object");
    const json defaults = synth_spec_to_json(SynthSpec{});
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!defaults.contains(it.key())) throw ParseError("synth spec: unknown key '" + it.key() + "'");
    }
    SynthSpec out;
    out.action = j.value("action", out.action);
    out.seed = j.value("seed", out.seed);
    out.instances = j.value("instances", out.instances);
    if (j.contains("frames")) {
      out.frames = j["frames"].is_array() ? j["frames"].get<std::vector<int>>() : std::vector<int>{j["frames"].get<int>()};
    }
    out.fps = j.value("fps", out.fps);
    out.keyframes = j.value("keyframes", out.keyframes);
    out.motion_amplitude = j.value("motion_amplitude", out.motion_amplitude);
    out.root_amplitude = j.value("root_amplitude", out.root_amplitude);
    out.warp_strength = j.value("warp_strength", out.warp_strength);
    out.warp_knots = j.value("warp_knots", out.warp_knots);
    out.perturbation = j.value("perturbation", out.perturbation);
    out.camera_radius = j.value("camera_radius", out.camera_radius);
    out.camera_height = j.value("camera_height", out.camera_height);
    out.camera_azimuths_deg = j.value("camera_azimuths_deg", out.camera_azimuths_deg);
    out.camera_azimuth_offset_deg = j.value("camera_azimuth_offset_deg", out.camera_azimuth_offset_deg);
    out.image_width = j.value("image_width", out.image_width);
    out.image_height = j.value("image_height", out.image_height);
    out.focal = j.value("focal", out.focal);
    out.pixel_noise = j.value("pixel_noise", out.pixel_noise);
    out.occlusion_fraction = j.value("occlusion_fraction", out.occlusion_fraction);
    out.occlusion_disjoint = j.value("occlusion_disjoint", out.occlusion_disjoint);
    out.init_rot_noise = j.value("init_rot_noise", out.init_rot_noise);
    out.init_arm_bias = j.value("init_arm_bias", out.init_arm_bias);
    out.init_trans_noise = j.value("init_trans_noise", out.init_trans_noise);
    if (j.contains("time_convention")) out.time_convention = parse_time_convention(j["time_convention"]);
    return out;
  });
  s.validate();
  return s;
}

// --- eval report ---

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json metric_set_json(const MetricSet& m) {
  return {{"mpjpe_mm", m.mpjpe},
          {"mpvpe_mm", opt_json(m.mpvpe)},
          {"global_mpjpe_mm", m.global_mpjpe},
          {"global_mpvpe_mm", opt_json(m.global_mpvpe)},
          {"recon2d_px", opt_json(m.recon2d)},
          {"pck", opt_json(m.pck)}};
}

inline json report_to_json(const EvalReport& r) {
  json inst = json::array();
  for (const auto& i : r.instances) {
    json j = {{"id", i.id}, {"full", metric_set_json(i.full)}};
    j["dynamic_range"] = i.dynamic_range ? json{i.dynamic_range->first, i.dynamic_range->second} : json(nullptr);
    j["dynamic"] = i.dynamic ? metric_set_json(*i.dynamic) : json(nullptr);
    inst.push_back(j);
  }
  return {{"mean", metric_set_json(r.mean)},
          {"dynamic_mean", r.dynamic_mean ? metric_set_json(*r.dynamic_mean) : json(nullptr)},
          {"instances", inst}};
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  return json(v).dump();
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "instance,frame,mpjpe_mm,global_mpjpe_mm,recon2d_px\n";
  for (const auto& i : r.instances) {
    for (std::size_t t = 0; t < i.frame_mpjpe.size(); ++t) {
      out += i.id + "," + std::to_string(t + 1) + "," + format_double(i.frame_mpjpe[t]) + "," +
             format_double(i.frame_global_mpjpe[t]) + "," + format_double(i.frame_recon2d[t]) + "\n";
    }
  }
  return out;
}

// --- checkpoint ---
//
// Layout: 8-byte magic "NEMOCKPT", uint64 little-endian header length, JSON
// header, then the payload of float64 little-endian values. The header lists
// every tensor with its byte offset into the payload (column-major data).

inline constexpr char kCheckpointMagic[8] = {'N', 'E', 'M', 'O', 'C', 'K', 'P', 'T'};

namespace detail {
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}
inline double get_f64(const std::string& in, std::size_t pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}
}  // namespace detail

inline std::string checkpoint_bytes(const ad::ParamStore& store, const json& config) {
  json tensors = json::array();
  std::string payload;
  for (const auto& e : store.entries()) {
    tensors.push_back({{"name", e.name},
                       {"rows", e.value.rows()},
                       {"cols", e.value.cols()},
                       {"learnable", e.learnable},
                       {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < e.value.size(); ++i) detail::put_f64(payload, e.value.data()[i]);
  }
  json header = {{"format", "nemo-checkpoint"},
                 {"version", 1},
                 {"config", config},
                 {"seed", config.value("seed", 0)},
                 {"payload_bytes", payload.size()},
                 {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, h.size());
  out += h;
  out += payload;
  return out;
}

struct Checkpoint {
  json header;
  ad::ParamStore params;
};

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, std::string(kCheckpointMagic, 8)) != 0) {
    throw ParseError("not a checkpoint file");
  }
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw ParseError("checkpoint header truncated");
  Checkpoint c;
  c.header = parse_json(bytes.substr(16, hlen), "checkpoint header");
  const std::size_t base = 16 + hlen;
  parsing("checkpoint header", [&] {
    for (const auto& t : c.header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
      const auto off = t.at("offset").get<std::size_t>();
      if (base + off + static_cast<std::size_t>(rows * cols) * 8 > bytes.size()) {
        throw ParseError("checkpoint payload truncated");
      }
      ad::Tensor v(rows, cols);
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = detail::get_f64(bytes, base + off + 8 * i);
      c.params.add(t.at("name").get<std::string>(), std::move(v), t.at("learnable").get<bool>());
    }
    return 0;
  });
  return c;
}

}  // namespace nemo::io
