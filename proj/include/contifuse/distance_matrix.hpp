#pragma once

#include <cmath>

#include "contifuse/correlation.hpp"
#include "contifuse/decay.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// Measured distance matrix M(i,j) = Gamma(states[i], states[j]) over a
/// (S, C, H, W) stack.  Symmetric with diagonal ~1 for non-constant states.
/// Loss evaluation never calls this (it evaluates only constrained pairs);
/// this full build exists for inspection, tests, and the benchmark.
template <typename T>
Tensor<double> build_distance_matrix(const Tensor<T>& stack, EvalCounter* counter = nullptr) {
  require(stack.rank() == 4, "build_distance_matrix: stack must be (S, C, H, W)");
  const Dim S = stack.dim(0);
  Tensor<double> m({S, S});
  for (Dim i = 0; i < S; ++i) {
    for (Dim j = 0; j <= i; ++j) {
      const double g = gamma_between_states(stack, i, j, counter);
      m(i, j) = g;
      m(j, i) = g;
    }
  }
  return m;
}

/// Target matrix M(i,j) = Omega(|i-j|, mu, span) for a stack with K
/// transition states (S = K+2).  Unit diagonal; decays toward mu with
/// index separation.  mu must already be clamped inside (0,1).
inline Tensor<double> build_target_matrix(Dim K, double mu, DecayKind kind,
                                          SpanConvention conv = SpanConvention::corner) {
  const Dim S = K + 2;
  const double span = decay_span(K, conv);
  Tensor<double> m({S, S});
  for (Dim i = 0; i < S; ++i)
    for (Dim j = 0; j < S; ++j)
      m(i, j) = apply_decay(kind, double(i > j ? i - j : j - i), mu, span);
  return m;
}

/// Clamp applied to mu before it parameterizes the decay: keeps ln(mu)
/// finite and negative.
inline double clamp_mu(double mu) {
  const double lo = 1e-4, hi = 1.0 - 1e-4;
  return mu < lo ? lo : (mu > hi ? hi : mu);
}

}  // namespace contifuse
