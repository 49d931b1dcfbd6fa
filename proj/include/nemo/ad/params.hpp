#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nemo/error.hpp"

namespace nemo::ad {

using Tensor = Eigen::MatrixXd;
using GradientMap = std::map<std::string, Tensor>;

/// Named parameter tensors plus Adam moment buffers. Insertion order is kept
/// so iteration (and hence checkpoints) is deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool learnable = true;
    Tensor m;
    Tensor v;
  };

  void add(const std::string& name, Tensor value, bool learnable = true) {
    if (index_.count(name)) throw ShapeMismatch("parameter already exists: " + name);
    Entry e;
    e.name = name;
    e.m = Tensor::Zero(value.rows(), value.cols());
    e.v = Tensor::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    e.learnable = learnable;
    index_.emplace(name, entries_.size());
    entries_.push_back(std::move(e));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Entry& entry(const std::string& name) const { return entries_.at(lookup(name)); }
  Entry& entry(const std::string& name) { return entries_.at(lookup(name)); }

  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& mutable_value(const std::string& name) { return entry(name).value; }

  bool learnable(const std::string& name) const { return entry(name).learnable; }
  void set_learnable(const std::string& name, bool on) { entry(name).learnable = on; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  long step() const { return step_; }
  void increment_step() { ++step_; }

  /// Clears moment buffers and the step count, as if a fresh optimizer were
  /// constructed over the same parameters.
  void reset_optimizer() {
    for (auto& e : entries_) {
      e.m.setZero();
      e.v.setZero();
    }
    step_ = 0;
  }

  std::size_t learnable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.learnable) n += static_cast<std::size_t>(e.value.size());
    }
    return n;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeMismatch("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  long step_ = 0;
};

}  // namespace nemo::ad
