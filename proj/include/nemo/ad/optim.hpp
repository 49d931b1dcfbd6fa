#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nemo/ad/ops.hpp"
#include "nemo/ad/params.hpp"
#include "nemo/ad/tape.hpp"

namespace nemo::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// In-place Adam update with bias correction over every learnable tensor.
/// Learnable tensors missing from `grads` are treated as having zero gradient;
/// frozen tensors are never touched.
inline void adam_step(ParamStore& store, const GradientMap& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    const Tensor& v = store.value(name);
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw ShapeMismatch("adam_step: gradient shape mismatch for " + name);
    }
  }
  store.increment_step();
  const double t = static_cast<double>(store.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double step_size = cfg.lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (auto& e : store.entries()) {
    if (!e.learnable) continue;
    auto it = grads.find(e.name);
    if (it != grads.end()) {
      e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * it->second;
      e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * it->second.cwiseAbs2();
    } else {
      e.m *= cfg.beta1;
      e.v *= cfg.beta2;
    }
    e.value.array() -= step_size * e.m.array() / (e.v.array().sqrt() / sqrt_bc2 + cfg.eps);
  }
}

/// Builds a scalar loss on a fresh tape by reading parameters from a store.
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;

inline double evaluate_loss(const LossBuilder& build, const ParamStore& store) {
  Tape tape;
  return build(tape, store).scalar();
}

/// Loss value and gradients of every learnable parameter.
inline std::pair<double, GradientMap> value_and_gradients(const LossBuilder& build, const ParamStore& store) {
  Tape tape;
  Var loss = build(tape, store);
  tape.backward(loss);
  return {loss.scalar(), tape.gradients(store)};
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  std::size_t checked = 0;
};

namespace detail {

/// |a - n| / max(|a|, |n|, floor). The floor scales with the loss so that
/// components whose true value is at round-off level do not dominate.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult check_coordinates(const LossBuilder& build, const ParamStore& store, double h,
                                         const std::vector<std::pair<std::size_t, Eigen::Index>>& coords) {
  auto [loss, grads] = value_and_gradients(build, store);
  const double floor = 1e-6 * std::max(1.0, std::abs(loss));
  ParamStore probe = store;
  GradCheckResult res;
  for (auto [entry, idx] : coords) {
    auto& e = probe.entries()[entry];
    const double orig = e.value.data()[idx];
    e.value.data()[idx] = orig + h;
    const double up = evaluate_loss(build, probe);
    e.value.data()[idx] = orig - h;
    const double down = evaluate_loss(build, probe);
    e.value.data()[idx] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.at(e.name).data()[idx];
    const double err = relative_error(analytic, numeric, floor);
    ++res.checked;
    if (res.worst_index < 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_param = e.name;
      res.worst_index = idx;
    }
  }
  return res;
}

}  // namespace detail

/// Compares analytic gradients to central differences on `samples` randomly
/// chosen learnable coordinates and returns the worst relative error.
inline GradCheckResult finite_diff_check(const LossBuilder& build, const ParamStore& store, double h,
                                         std::size_t samples, std::uint64_t seed = 0) {
  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    const auto& e = store.entries()[i];
    if (!e.learnable) continue;
    for (Eigen::Index k = 0; k < e.value.size(); ++k) all.emplace_back(i, k);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  if (!all.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    for (std::size_t s = 0; s < samples; ++s) coords.push_back(all[pick(rng)]);
  }
  return detail::check_coordinates(build, store, h, coords);
}

/// Same as finite_diff_check but over every learnable coordinate.
inline GradCheckResult finite_diff_check_all(const LossBuilder& build, const ParamStore& store, double h) {
  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    const auto& e = store.entries()[i];
    if (!e.learnable) continue;
    for (Eigen::Index k = 0; k < e.value.size(); ++k) all.emplace_back(i, k);
  }
  return detail::check_coordinates(build, store, h, all);
}

}  // namespace nemo::ad
