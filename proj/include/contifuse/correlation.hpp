#pragma once

#include <cmath>

#include "contifuse/tensor.hpp"

namespace contifuse {

/// Counts correlation evaluations so cost contracts (O(K) sampled vs O(K^2)
/// full) can be asserted by tests and the benchmark command.
struct EvalCounter {
  long long pair_evals = 0;  // correlations between constrained state pairs
  long long mu_evals = 0;    // endpoint correlations used to set the target floor
  void reset() { pair_evals = mu_evals = 0; }
};

/// Additive stabilizer inside each Pearson denominator factor; a constant map
/// (zero variance) therefore correlates to 0 rather than dividing by zero.
inline constexpr double kPearsonEps = 1e-8;

/// Pearson correlation of two flattened maps with stabilized denominators.
template <typename T>
double pearson_channel(const T* a, const T* b, Dim n) {
  require(n >= 2, "pearson_channel: need at least 2 elements");
  double ma = 0, mb = 0;
  for (Dim i = 0; i < n; ++i) {
    ma += double(a[i]);
    mb += double(b[i]);
  }
  ma /= double(n);
  mb /= double(n);
  double sab = 0, saa = 0, sbb = 0;
  for (Dim i = 0; i < n; ++i) {
    const double x = double(a[i]) - ma;
    const double y = double(b[i]) - mb;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  return sab / (std::sqrt(saa + kPearsonEps) * std::sqrt(sbb + kPearsonEps));
}

/// Channel-averaged Pearson correlation between two C x H x W feature maps
/// (flattened per channel).  1 means identical up to positive affine maps;
/// smaller values mean the features are further apart.
template <typename T>
double gamma_distance(const T* x, const T* y, Dim C, Dim P) {
  double s = 0;
  for (Dim c = 0; c < C; ++c) s += pearson_channel(x + c * P, y + c * P, P);
  return s / double(C);
}

/// gamma_distance plus gradient accumulation: gx += d(g * Gamma)/dx and
/// gy += d(g * Gamma)/dy for the upstream scalar gradient g.  The centering
/// step's adjoint is the identity here because each per-channel gradient is
/// itself zero-mean.
template <typename T>
double gamma_distance_backward(const T* x, const T* y, Dim C, Dim P, double g, T* gx, T* gy) {
  const double scale = g / double(C);
  double total = 0;
  for (Dim c = 0; c < C; ++c) {
    const T* a = x + c * P;
    const T* b = y + c * P;
    double ma = 0, mb = 0;
    for (Dim i = 0; i < P; ++i) {
      ma += double(a[i]);
      mb += double(b[i]);
    }
    ma /= double(P);
    mb /= double(P);
    double sab = 0, saa = 0, sbb = 0;
    for (Dim i = 0; i < P; ++i) {
      const double xc = double(a[i]) - ma;
      const double yc = double(b[i]) - mb;
      sab += xc * yc;
      saa += xc * xc;
      sbb += yc * yc;
    }
    const double da = saa + kPearsonEps;
    const double db = sbb + kPearsonEps;
    const double denom = std::sqrt(da) * std::sqrt(db);
    const double r = sab / denom;
    total += r;
    if (gx || gy) {
      const double inv_denom = 1.0 / denom;
      const double ra = sab / da;
      const double rb = sab / db;
      T* gxa = gx ? gx + c * P : nullptr;
      T* gyb = gy ? gy + c * P : nullptr;
      for (Dim i = 0; i < P; ++i) {
        const double xc = double(a[i]) - ma;
        const double yc = double(b[i]) - mb;
        if (gxa) gxa[i] += T(scale * (yc - ra * xc) * inv_denom);
        if (gyb) gyb[i] += T(scale * (xc - rb * yc) * inv_denom);
      }
    }
  }
  return total / double(C);
}

/// gamma_distance over whole state tensors; states are (C, H, W) slices of a
/// (S, C, H, W) stack.
template <typename T>
double gamma_between_states(const Tensor<T>& stack, Dim i, Dim j, EvalCounter* counter,
                            bool is_mu = false) {
  const Dim C = stack.dim(1);
  const Dim P = stack.dim(2) * stack.dim(3);
  if (counter) (is_mu ? counter->mu_evals : counter->pair_evals) += 1;
  return gamma_distance(stack.data() + i * C * P, stack.data() + j * C * P, C, P);
}

}  // namespace contifuse
