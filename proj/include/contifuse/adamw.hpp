#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "contifuse/params.hpp"

namespace contifuse {

/// Scales all gradients so their global L2 norm does not exceed max_norm.
/// Returns the pre-clip norm.  A non-finite max_norm disables clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& ps, double max_norm) {
  const double norm = ps.grad_norm();
  if (std::isfinite(max_norm) && norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto& p : ps)
      for (Dim i = 0; i < p.grad.numel(); ++i) p.grad[i] = T(double(p.grad[i]) * s);
  }
  return norm;
}

/// Adam with decoupled weight decay.  Moment accumulators are kept in double
/// regardless of the parameter dtype so checkpoint round trips are exact and
/// float runs stay reproducible.
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void attach(const ParamStore<T>& ps) {
    m_.clear();
    v_.clear();
    for (const auto& p : ps) {
      m_.emplace_back(p.value.dims());
      v_.emplace_back(p.value.dims());
    }
    t_ = 0;
  }

  bool attached(const ParamStore<T>& ps) const { return m_.size() == ps.size(); }
  Dim step_count() const { return t_; }
  Tensor<double>& first_moment(std::size_t i) { return m_[i]; }
  Tensor<double>& second_moment(std::size_t i) { return v_[i]; }
  const Tensor<double>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<double>& second_moment(std::size_t i) const { return v_[i]; }
  void set_step_count(Dim t) { t_ = t; }

  void step(ParamStore<T>& ps, double lr) {
    require(attached(ps), "AdamW: attach() before step()");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& p = ps[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (Dim i = 0; i < p.value.numel(); ++i) {
        const double g = double(p.grad[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        const double w = double(p.value[i]);
        p.value[i] = T(w - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w));
      }
    }
  }

 private:
  std::vector<Tensor<double>> m_, v_;
  Dim t_ = 0;
};

}  // namespace contifuse
