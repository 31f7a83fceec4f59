#pragma once

#include <cmath>

#include "contifuse/tensor.hpp"

namespace contifuse {

/// Mirror fold (edge pixel not duplicated) for out-of-range indices.
inline Dim reflect_index(Dim i, Dim n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

namespace detail {

inline constexpr double kSobelX[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
inline constexpr double kSobelY[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};

}  // namespace detail

/// Horizontal/vertical Sobel responses with mirrored borders.
template <typename T>
void sobel_forward(const T* x, T* gx, T* gy, Dim H, Dim W) {
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      double sx = 0, sy = 0;
      for (Dim a = 0; a < 3; ++a) {
        const Dim ii = reflect_index(i + a - 1, H);
        for (Dim b = 0; b < 3; ++b) {
          const Dim jj = reflect_index(j + b - 1, W);
          const double v = double(x[ii * W + jj]);
          sx += detail::kSobelX[a * 3 + b] * v;
          sy += detail::kSobelY[a * 3 + b] * v;
        }
      }
      gx[i * W + j] = T(sx);
      gy[i * W + j] = T(sy);
    }
}

/// L1 Sobel magnitude |Gx| + |Gy|.
template <typename T>
void sobel_magnitude(const T* x, T* mag, Dim H, Dim W) {
  Tensor<T> gx({H, W}), gy({H, W});
  sobel_forward(x, gx.data(), gy.data(), H, W);
  for (Dim i = 0; i < H * W; ++i) mag[i] = T(std::fabs(double(gx[i])) + std::fabs(double(gy[i])));
}

/// Mean squared error of the fused image against the elementwise max of the
/// sources.  If gf is non-null, accumulates g * dL/dF into it.
template <typename T>
double intensity_loss(const T* f, const T* ir, const T* vis, Dim H, Dim W, double g = 1.0,
                      T* gf = nullptr) {
  const Dim n = H * W;
  double loss = 0;
  const double scale = 1.0 / double(n);
  for (Dim i = 0; i < n; ++i) {
    const double target = std::max(double(ir[i]), double(vis[i]));
    const double r = double(f[i]) - target;
    loss += r * r;
    if (gf) gf[i] += T(g * 2.0 * r * scale);
  }
  return loss * scale;
}

/// Mean squared error of the fused Sobel magnitude against the elementwise
/// max of the source magnitudes.  Gradient flows through the fused image
/// only (the sources are data).  If gf is non-null, accumulates g * dL/dF.
template <typename T>
double gradient_loss(const T* f, const T* ir, const T* vis, Dim H, Dim W, double g = 1.0,
                     T* gf = nullptr) {
  const Dim n = H * W;
  Tensor<T> fgx({H, W}), fgy({H, W}), tmp({H, W});
  sobel_forward(f, fgx.data(), fgy.data(), H, W);
  Tensor<T> target({H, W});
  sobel_magnitude(ir, target.data(), H, W);
  sobel_magnitude(vis, tmp.data(), H, W);
  for (Dim i = 0; i < n; ++i)
    target[i] = std::max(target[i], tmp[i]);

  const double scale = 1.0 / double(n);
  double loss = 0;
  Tensor<T> dgx, dgy;
  if (gf) {
    dgx = Tensor<T>({H, W});
    dgy = Tensor<T>({H, W});
  }
  for (Dim i = 0; i < n; ++i) {
    const double mag = std::fabs(double(fgx[i])) + std::fabs(double(fgy[i]));
    const double r = mag - double(target[i]);
    loss += r * r;
    if (gf) {
      const double dm = g * 2.0 * r * scale;
      dgx[i] = T(dm * (fgx[i] > T(0) ? 1.0 : (fgx[i] < T(0) ? -1.0 : 0.0)));
      dgy[i] = T(dm * (fgy[i] > T(0) ? 1.0 : (fgy[i] < T(0) ? -1.0 : 0.0)));
    }
  }
  if (gf) {
    // Adjoint of the mirrored correlation: scatter each tap back to its
    // source pixel.
    for (Dim i = 0; i < H; ++i)
      for (Dim j = 0; j < W; ++j) {
        const double vx = double(dgx[i * W + j]);
        const double vy = double(dgy[i * W + j]);
        for (Dim a = 0; a < 3; ++a) {
          const Dim ii = reflect_index(i + a - 1, H);
          for (Dim b = 0; b < 3; ++b) {
            const Dim jj = reflect_index(j + b - 1, W);
            gf[ii * W + jj] +=
                T(detail::kSobelX[a * 3 + b] * vx + detail::kSobelY[a * 3 + b] * vy);
          }
        }
      }
  }
  return loss * scale;
}

}  // namespace contifuse
