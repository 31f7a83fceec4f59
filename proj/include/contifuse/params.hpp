#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "contifuse/rng.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// One learnable tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered, named parameter registry.  Registration order is the canonical
/// order for initialization, optimizer slots, and checkpoints, so it must be
/// deterministic.  Storage is a deque: references stay valid across adds.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(std::string name, std::vector<Dim> dims) {
    require(!index_.count(name), "duplicate parameter name: " + name);
    params_.push_back(Param<T>{std::move(name), Tensor<T>(dims), Tensor<T>(std::move(dims))});
    index_[params_.back().name] = params_.size() - 1;
    return params_.back();
  }

  Param<T>& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  const Param<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Dim total_elements() const {
    Dim n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.zero();
  }

  /// Global L2 norm of all gradients.
  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_)
      for (Dim i = 0; i < p.grad.numel(); ++i) s += double(p.grad[i]) * double(p.grad[i]);
    return std::sqrt(s);
  }

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Fan-in-scaled normal initialization for a convolution weight
/// (out, in/groups, k, k): std = sqrt(2 / fan_in), suited to the
/// ReLU-heavy blocks.  Draws in element order from the given generator.
template <typename T>
void init_conv_weight(Tensor<T>& w, Rng& rng) {
  require(w.rank() == 4, "conv weight must be rank 4");
  const double fan_in = double(w.dim(1) * w.dim(2) * w.dim(3));
  const double sd = std::sqrt(2.0 / fan_in);
  for (Dim i = 0; i < w.numel(); ++i) w[i] = T(sd * rng.normal());
}

}  // namespace contifuse
