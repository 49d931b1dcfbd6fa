#pragma once

// Tensor-valued reverse-mode differentiation. A Tape records nodes in
// creation order, which is a valid topological order; backward() walks it in
// reverse. Nodes that do not depend on any gradient-requiring leaf carry no
// closure and are skipped.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nemo/ad/params.hpp"
#include "nemo/error.hpp"

namespace nemo::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  bool needs_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Called during backward with the node's own id; must push the node's
  /// adjoint into its parents through accumulate().
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}, {}); }

  Var constant(double v) { return constant(Tensor::Constant(1, 1, v)); }

  /// Anonymous leaf that requires a gradient (used in tests).
  Var variable(Tensor value) { return push(std::move(value), true, {}, {}); }

  /// Leaf bound to a named parameter. Requires a gradient iff the parameter
  /// is learnable.
  Var parameter(const ParamStore& store, const std::string& name) {
    const auto& e = store.entry(name);
    return push(e.value, e.learnable, name, {});
  }

  /// Records an interior node. `parents` decides whether it needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id_].needs_grad;
    return push(std::move(value), needs, {}, needs ? std::move(fn) : Backward{});
  }
  Var record(Tensor value, const std::vector<Var>& parents, Backward fn) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id_].needs_grad;
    return push(std::move(value), needs, {}, needs ? std::move(fn) : Backward{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].adjoint; }

  /// adjoint(id) += delta, if the node participates in differentiation.
  template <class Expr>
  void accumulate(std::size_t id, const Expr& delta) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.adjoint.size() == 0) {
      n.adjoint = delta;
    } else {
      n.adjoint += delta;
    }
  }
  void accumulate(const Var& v, const Tensor& delta) { accumulate(v.id_, delta); }

  void backward(const Var& loss) {
    const Tensor& lv = nodes_.at(loss.id_).value;
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw NonScalarLoss("backward requires a 1x1 loss, got " + std::to_string(lv.rows()) + "x" +
                          std::to_string(lv.cols()));
    }
    for (auto& n : nodes_) n.adjoint.resize(0, 0);
    if (!nodes_[loss.id_].needs_grad) return;
    nodes_[loss.id_].adjoint = Tensor::Ones(1, 1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.adjoint.size() == 0) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient of the last backward() loss w.r.t. `v`; zeros if unreachable.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id_];
    if (n.adjoint.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }

  /// One entry per learnable parameter of `store`; parameters that were not
  /// on the tape (or not reachable from the loss) get zeros. Repeated leaves
  /// of the same parameter are summed.
  GradientMap gradients(const ParamStore& store) const {
    GradientMap out;
    for (const auto& e : store.entries()) {
      if (e.learnable) out.emplace(e.name, Tensor::Zero(e.value.rows(), e.value.cols()));
    }
    for (const Node& n : nodes_) {
      if (n.param.empty() || n.adjoint.size() == 0) continue;
      auto it = out.find(n.param);
      if (it != out.end()) it->second += n.adjoint;
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    bool needs_grad = false;
    std::string param;
    Backward backward;
  };

  Var push(Tensor value, bool needs, std::string param, Backward fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), needs, std::move(param), std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::needs_grad() const { return tape_->needs_grad(id_); }
inline double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw NonScalarLoss("scalar() called on a non-1x1 node");
  return v(0, 0);
}

}  // namespace nemo::ad
