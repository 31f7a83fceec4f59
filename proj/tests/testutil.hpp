#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "contifuse/rng.hpp"
#include "contifuse/tensor.hpp"

namespace testutil {

using contifuse::Dim;
using contifuse::Rng;
using contifuse::Tensor;

inline Tensor<double> random_tensor(std::vector<Dim> dims, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(dims));
  for (Dim i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

/// Central-difference derivative of f() with respect to *slot.
template <typename F>
double fd(F&& f, double* slot, double eps = 1e-6) {
  const double x0 = *slot;
  *slot = x0 + eps;
  const double fp = f();
  *slot = x0 - eps;
  const double fm = f();
  *slot = x0;
  return (fp - fm) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-4});
  return std::fabs(a - b) / denom;
}

/// Compares an analytic gradient against finite differences entry-by-entry.
/// Checks every entry when n is small, otherwise a deterministic sample.
template <typename F>
void expect_grad_matches(F&& loss, double* x, Dim n, const double* analytic, double tol = 2e-5,
                         Dim max_checks = 64) {
  Rng pick(424242);
  std::vector<Dim> idx;
  if (n <= max_checks) {
    for (Dim i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (Dim i = 0; i < max_checks; ++i) idx.push_back(Dim(pick.below(std::uint64_t(n))));
  }
  for (Dim i : idx) {
    const double num = fd(loss, x + i);
    INFO("entry " << i << ": analytic=" << analytic[i] << " numeric=" << num);
    CHECK(rel_err(analytic[i], num) < tol);
  }
}

}  // namespace testutil
