#pragma once

// Command implementations behind the `nemo` executable. Each command returns
// a process exit code; errors are reported as one line on stderr:
//
//   error: <Tag>: <message>
//
// Exit codes:
//   0 success
//   1 other runtime failure (I/O, degenerate geometry, ...)
//   2 malformed input file or spec
//   3 NoValidKeypoints
//   4 DegeneratePhase
//   5 ModelHashMismatch
//   6 MissingInitialEstimate
//   7 bad command line

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "nemo/io.hpp"

namespace nemo::cli {

namespace fs = std::filesystem;
using io::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kParse = 2,
  kNoValidKeypoints = 3,
  kDegeneratePhase = 4,
  kModelHash = 5,
  kMissingInitial = 6,
  kUsage = 7,
};

inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const ParseError*>(&e)) return kParse;
  if (dynamic_cast<const NoValidKeypoints*>(&e)) return kNoValidKeypoints;
  if (dynamic_cast<const DegeneratePhase*>(&e)) return kDegeneratePhase;
  if (dynamic_cast<const ModelHashMismatch*>(&e)) return kModelHash;
  if (dynamic_cast<const MissingInitialEstimate*>(&e)) return kMissingInitial;
  return kFailure;
}

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

inline void report_error(std::ostream& err, const std::string& tag, const std::string& msg) {
  err << "error: " << tag << ": " << one_line(msg) << "\n";
}

// --- generate ---

struct GenerateArgs {
  std::string spec;  // empty: defaults
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string model = io::kBuiltinModel;
};

inline io::MotionFile ground_truth_file(const SynthScene& scene, const io::LoadedModel& model) {
  io::MotionFile m{model.path, model.hash, {}, {}};
  for (std::size_t n = 0; n < scene.observations.size(); ++n) {
    m.instances.push_back(
        {scene.observations[n].id, scene.ground_truth[n].poses, scene.ground_truth[n].phases, scene.cameras[n]});
  }
  const Eigen::VectorXd phi = io::canonical_phases();
  for (Eigen::Index i = 0; i < phi.size(); ++i) m.canonical.push_back(scene.canonical.at(phi(i)));
  return m;
}

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  SynthSpec spec = a.spec.empty() ? SynthSpec{} : io::synth_spec_from_json(io::load_json(a.spec));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const io::LoadedModel model = io::load_model(a.model);
  const SynthScene scene = generate_scene(spec, model.model);

  io::Dataset d;
  d.action = spec.action;
  d.layout_name = model.model.keypoints == 13 ? "penn13" : "custom";
  d.layout_count = model.model.keypoints;
  d.instances = scene.observations;

  json cams = json::array();
  for (std::size_t n = 0; n < scene.cameras.size(); ++n) {
    json c = io::camera_json(scene.cameras[n]);
    c["id"] = scene.observations[n].id;
    cams.push_back(c);
  }
  const fs::path dir(a.out);
  io::write_atomic(dir / "dataset.json", io::dump(io::dataset_to_json(d)));
  io::write_atomic(dir / "ground_truth.json", io::dump(io::motion_to_json(ground_truth_file(scene, model))));
  io::write_atomic(dir / "cameras.json", io::dump(cams));

  int hidden = 0, total = 0;
  for (const auto& o : scene.observations) {
    for (const auto& f : o.keypoints2d) {
      hidden += static_cast<int>((f.col(2).array() <= 0.0).count());
      total += static_cast<int>(f.rows());
    }
  }
  out << "generated " << scene.observations.size() << " instances, T =";
  for (const auto& o : scene.observations) out << " " << o.frames();
  out << ", occluded keypoints " << hidden << "/" << total << "\n";
  return kOk;
}

// --- fit ---

struct FitArgs {
  std::string dataset;
  std::string config;  // empty: defaults
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  bool single_instance = false;
  bool pin_cameras = false;
  std::string model = io::kBuiltinModel;
};

/// Copy of the entries under `prefix`, with the prefix removed.
inline ad::ParamStore strip_prefix(const ad::ParamStore& store, const std::string& prefix) {
  ad::ParamStore out;
  for (const auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) == 0) out.add(e.name.substr(prefix.size()), e.value, e.learnable);
  }
  return out;
}

/// The shared motion at the mean instance code.
inline std::vector<Pose> canonical_samples(const ad::ParamStore& store, const FieldConfig& cfg, int instances) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(cfg.code_dim);
  for (int n = 0; n < instances; ++n) z += store.value(pname::code(n)).row(0).transpose();
  z /= instances;
  return field_eval_batch(store, cfg, io::canonical_phases(), z);
}

inline io::MotionFile motion_file(const FitResult& r, const std::vector<Observation>& obs, const FitConfig& cfg,
                                  const io::LoadedModel& model, bool single_instance) {
  io::MotionFile m{model.path, model.hash, {}, {}};
  for (std::size_t n = 0; n < obs.size(); ++n) {
    m.instances.push_back({obs[n].id, r.motions[n].poses, r.motions[n].phases, r.cameras[n]});
  }
  m.canonical = single_instance ? canonical_samples(strip_prefix(r.params, "fit0/"), cfg.field, 1)
                                : canonical_samples(r.params, cfg.field, static_cast<int>(obs.size()));
  return m;
}

inline std::string loss_csv(const FitResult& r) {
  std::string s = "stage,step,loss\n";
  for (std::size_t i = 0; i < r.stage1_loss.size(); ++i) {
    s += "1," + std::to_string(i + 1) + "," + io::format_double(r.stage1_loss[i]) + "\n";
  }
  for (std::size_t i = 0; i < r.stage2_loss.size(); ++i) {
    s += "2," + std::to_string(i + 1) + "," + io::format_double(r.stage2_loss[i]) + "\n";
  }
  return s;
}

inline FitConfig load_fit_config(const FitArgs& a, int joints) {
  FitConfig cfg = a.config.empty() ? FitConfig{} : io::fit_config_from_json(io::load_json(a.config));
  if (a.seed) cfg.seed = *a.seed;
  if (a.pin_cameras) cfg.pin_cameras = true;
  cfg.field.joints = joints;
  return cfg;
}

inline int cmd_fit(const FitArgs& a, std::ostream& out) {
  const io::LoadedModel model = io::load_model(a.model);
  const FitConfig cfg = load_fit_config(a, model.model.joints);
  const io::Dataset d = io::dataset_from_json(io::load_json(a.dataset), model.model.joints);
  if (d.layout_count != model.model.keypoints) {
    throw ParseError("dataset has " + std::to_string(d.layout_count) + " keypoints, body model regresses " +
                     std::to_string(model.model.keypoints));
  }

  int last_stage = 0;
  const FitObserver log = [&](int stage, int step, double loss) {
    if (stage != last_stage) {
      out << "stage " << stage << (stage == 1 ? " (warmup)" : " (reprojection)") << " begins\n";
      last_stage = stage;
    }
    if ((step + 1) % 100 == 0) out << "stage " << stage << " step " << step + 1 << " loss " << loss << "\n";
  };
  const FitResult r = a.single_instance ? fit_independently(d.instances, model.model, cfg, log)
                                        : fit(d.instances, model.model, cfg, log);
  double mean_res = 0.0;
  for (double v : r.residual_px) mean_res += v;
  mean_res /= static_cast<double>(r.residual_px.size());
  out << "final mean 2D residual " << mean_res << " px\n";

  const fs::path dir(a.out);
  json header = io::fit_config_to_json(cfg);
  header["single_instance"] = a.single_instance;
  io::write_atomic(dir / "motion.json",
                   io::dump(io::motion_to_json(motion_file(r, d.instances, cfg, model, a.single_instance))));
  io::write_atomic(dir / "checkpoint.nemo", io::checkpoint_bytes(r.params, header));
  io::write_atomic(dir / "loss.csv", loss_csv(r));
  return kOk;
}

// --- eval ---

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string dataset;
  std::string out = ".";
};

inline io::LoadedModel model_for(const std::string& path, const std::string& hash) {
  io::LoadedModel m = io::load_model(path);
  if (m.hash != hash) throw ModelHashMismatch(path + " hashes to " + m.hash + ", file expects " + hash);
  return m;
}

inline std::vector<EvalInput> eval_inputs(const io::MotionFile& pred, const io::MotionFile& gt, const io::Dataset& d) {
  if (pred.instances.size() != gt.instances.size() || gt.instances.size() != d.instances.size()) {
    throw ParseError("prediction, ground truth and dataset list different instance counts");
  }
  std::vector<EvalInput> inputs;
  for (std::size_t n = 0; n < d.instances.size(); ++n) {
    const Observation& o = d.instances[n];
    const io::MotionInstance& p = pred.instances[n];
    const io::MotionInstance& g = gt.instances[n];
    if (p.id != o.id || g.id != o.id) throw ParseError("instance ids differ at position " + std::to_string(n));
    if (static_cast<int>(p.poses.size()) != o.frames() || static_cast<int>(g.poses.size()) != o.frames()) {
      throw ParseError("instance " + o.id + ": frame counts differ");
    }
    EvalInput in;
    in.id = o.id;
    in.fps = o.fps;
    in.pred_poses = p.poses;
    in.gt_poses = g.poses;
    for (Camera* c : {&in.pred_camera, &in.gt_camera}) {
      *c = c == &in.pred_camera ? p.camera : g.camera;
      c->intrinsics = o.intrinsics;
      c->width = o.width;
      c->height = o.height;
    }
    in.visible = Mask(o.frames(), o.keypoints());
    for (int t = 0; t < o.frames(); ++t) in.visible.row(t) = (o.keypoints2d[t].col(2).array() > 0.0).transpose();
    inputs.push_back(std::move(in));
  }
  return inputs;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const json pj = io::load_json(a.pred), gj = io::load_json(a.gt);
  const auto [ppath, phash] = io::motion_model_ref(pj);
  const auto [gpath, ghash] = io::motion_model_ref(gj);
  if (phash != ghash) throw ModelHashMismatch("prediction uses model " + phash + ", ground truth uses " + ghash);
  const io::LoadedModel model = model_for(ppath, phash);
  const io::MotionFile pred = io::motion_from_json(pj, model.model.joints);
  const io::MotionFile gt = io::motion_from_json(gj, model.model.joints);
  const io::Dataset d = io::dataset_from_json(io::load_json(a.dataset), model.model.joints);

  const EvalReport report = evaluate(model.model, eval_inputs(pred, gt, d));
  const fs::path dir(a.out);
  io::write_atomic(dir / "report.json", io::dump(io::report_to_json(report)));
  io::write_atomic(dir / "per_frame.csv", io::report_csv(report));
  out << "mpjpe " << report.mean.mpjpe << " mm, global mpjpe " << report.mean.global_mpjpe << " mm\n";
  return kOk;
}

// --- export ---

struct ExportArgs {
  std::string motion;
  std::string out = "joints.csv";
};

inline std::string joints_csv(const io::MotionFile& m, const BodyModel& model) {
  std::string s = "instance,frame,joint,x,y,z\n";
  for (const auto& inst : m.instances) {
    for (std::size_t t = 0; t < inst.poses.size(); ++t) {
      const Points3 p = forward_kinematics(model, inst.poses[t]);
      for (Eigen::Index j = 0; j < p.rows(); ++j) {
        s += inst.id + "," + std::to_string(t + 1) + "," + std::to_string(j) + "," + io::format_double(p(j, 0)) + "," +
             io::format_double(p(j, 1)) + "," + io::format_double(p(j, 2)) + "\n";
      }
    }
  }
  return s;
}

inline int cmd_export(const ExportArgs& a, std::ostream& out) {
  const json mj = io::load_json(a.motion);
  const auto [path, hash] = io::motion_model_ref(mj);
  const io::LoadedModel model = model_for(path, hash);
  const io::MotionFile m = io::motion_from_json(mj, model.model.joints);
  io::write_atomic(a.out, joints_csv(m, model.model));
  out << "wrote " << a.out << "\n";
  return kOk;
}

// --- entry point ---

/// Runs `fn`, translating exceptions into exit codes and a stderr line.
template <class F>
int guarded(F&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const Error& e) {
    report_error(err, e.tag(), e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    report_error(err, "RuntimeError", e.what());
    return kFailure;
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Joint 3D motion recovery from unsynchronized 2D keypoint videos"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render a synthetic multi-instance dataset");
  g->add_option("--config", gen.spec, "Synthetic scene spec (JSON)");
  g->add_option("--out", gen.out, "Output directory");
  g->add_option("--seed", gen.seed, "Overrides the scene config seed");
  g->add_option("--model", gen.model, "Body model JSON or builtin:humanoid24");

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "Recover 3D motion from a dataset");
  f->add_option("dataset", fa.dataset, "Dataset JSON")->required();
  f->add_option("--config", fa.config, "Fit configuration (JSON)");
  f->add_option("--out", fa.out, "Output directory");
  f->add_option("--seed", fa.seed, "Overrides the config seed");
  f->add_flag("--single-instance", fa.single_instance, "Fit every instance independently");
  f->add_flag("--pin-cameras", fa.pin_cameras, "Keep the initial extrinsics fixed");
  f->add_option("--model", fa.model, "Body model JSON or builtin:humanoid24");

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "Score a predicted motion file against ground truth");
  e->add_option("pred", ea.pred, "Predicted motion JSON")->required();
  e->add_option("gt", ea.gt, "Ground-truth motion JSON")->required();
  e->add_option("dataset", ea.dataset, "Dataset JSON (visibility, intrinsics, fps)")->required();
  e->add_option("--out", ea.out, "Output directory");

  ExportArgs xa;
  auto* x = app.add_subcommand("export", "Write joint positions of a motion file as CSV");
  x->add_option("motion", xa.motion, "Motion JSON")->required();
  x->add_option("--out", xa.out, "CSV path");

  std::string model_out = "humanoid24.json";
  auto* m = app.add_subcommand("model", "Write the built-in body model as JSON");
  m->add_option("--out", model_out, "Output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    report_error(err, "UsageError", ex.what());
    return kUsage;
  }

  return guarded(
      [&] {
        if (g->parsed()) return cmd_generate(gen, out);
        if (f->parsed()) return cmd_fit(fa, out);
        if (e->parsed()) return cmd_eval(ea, out);
        if (x->parsed()) return cmd_export(xa, out);
        io::write_atomic(model_out, io::dump(io::model_to_json(default_humanoid())));
        out << "wrote " << model_out << " (hash " << io::model_hash(default_humanoid()) << ")\n";
        return static_cast<int>(kOk);
      },
      err);
}

}  // namespace nemo::cli
