#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "contifuse/gemm.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse::nn {

/// Stride-1, same-padding convolution geometry.  ksize must be odd; spatial
/// size is preserved.  Channels are split into `groups` equal blocks.
struct Conv2dDims {
  Dim batch = 1;
  Dim in_ch = 0;
  Dim out_ch = 0;
  Dim height = 0;
  Dim width = 0;
  Dim ksize = 3;
  Dim groups = 1;
};

namespace detail {

template <typename T>
std::vector<T>& scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf;
}

inline void validate(const Conv2dDims& d) {
  require(d.ksize % 2 == 1 && d.ksize >= 1, "conv2d: kernel size must be odd");
  require(d.groups >= 1 && d.in_ch % d.groups == 0 && d.out_ch % d.groups == 0,
          "conv2d: channel counts must divide by groups");
  require(d.batch >= 1 && d.height >= 1 && d.width >= 1, "conv2d: bad extents");
}

/// Expands one channel block [c0, c0+cg) of x (C,H,W) into col (cg*k*k, H*W)
/// with zero padding.  Row (ci*k*k + dy*k + dx) holds x[c0+ci] shifted by
/// (dy-r, dx-r), r = k/2.
template <typename T>
void im2col(const T* x, Dim c0, Dim cg, Dim C, Dim H, Dim W, Dim k, T* col) {
  (void)C;
  const Dim r = k / 2;
  for (Dim ci = 0; ci < cg; ++ci) {
    const T* xc = x + (c0 + ci) * H * W;
    for (Dim dy = 0; dy < k; ++dy) {
      for (Dim dx = 0; dx < k; ++dx) {
        T* row = col + ((ci * k + dy) * k + dx) * H * W;
        const Dim ox = dx - r;
        const Dim x_lo = std::max<Dim>(0, -ox);
        const Dim x_hi = std::min<Dim>(W, W - ox);
        for (Dim y = 0; y < H; ++y) {
          const Dim iy = y + dy - r;
          T* out = row + y * W;
          if (iy < 0 || iy >= H) {
            std::memset(out, 0, sizeof(T) * std::size_t(W));
            continue;
          }
          if (x_lo > 0) std::memset(out, 0, sizeof(T) * std::size_t(x_lo));
          if (x_hi > x_lo)
            std::memcpy(out + x_lo, xc + iy * W + x_lo + ox, sizeof(T) * std::size_t(x_hi - x_lo));
          if (x_hi < W) std::memset(out + x_hi, 0, sizeof(T) * std::size_t(W - x_hi));
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds col (cg*k*k, H*W) back into dx channels
/// [c0, c0+cg).  dx must be pre-initialized (accumulates).
template <typename T>
void col2im_add(const T* col, Dim c0, Dim cg, Dim C, Dim H, Dim W, Dim k, T* dx) {
  (void)C;
  const Dim r = k / 2;
  for (Dim ci = 0; ci < cg; ++ci) {
    T* xc = dx + (c0 + ci) * H * W;
    for (Dim dy = 0; dy < k; ++dy) {
      for (Dim dx_ = 0; dx_ < k; ++dx_) {
        const T* row = col + ((ci * k + dy) * k + dx_) * H * W;
        const Dim ox = dx_ - r;
        const Dim x_lo = std::max<Dim>(0, -ox);
        const Dim x_hi = std::min<Dim>(W, W - ox);
        for (Dim y = 0; y < H; ++y) {
          const Dim iy = y + dy - r;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + y * W;
          T* dst = xc + iy * W + ox;
          for (Dim x = x_lo; x < x_hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

}  // namespace detail

/// y = conv(x, w) + bias.  x: (B, Cin, H, W), w: (Cout, Cin/g, k, k),
/// bias: (Cout) or nullptr, y: (B, Cout, H, W).  1x1 kernels skip im2col.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, const Conv2dDims& d) {
  detail::validate(d);
  const Dim P = d.height * d.width;
  const Dim cg = d.in_ch / d.groups;
  const Dim og = d.out_ch / d.groups;
  const Dim kk = d.ksize * d.ksize;
  T* col = nullptr;
  if (d.ksize > 1) col = detail::scratch<T>(std::size_t(cg * kk * P)).data();
  for (Dim b = 0; b < d.batch; ++b) {
    const T* xb = x + b * d.in_ch * P;
    T* yb = y + b * d.out_ch * P;
    for (Dim g = 0; g < d.groups; ++g) {
      const T* wg = w + g * og * cg * kk;
      T* yg = yb + g * og * P;
      if (d.ksize == 1) {
        gemm(wg, xb + g * cg * P, yg, og, cg, P);
      } else {
        detail::im2col(xb, g * cg, cg, d.in_ch, d.height, d.width, d.ksize, col);
        gemm(wg, col, yg, og, cg * kk, P);
      }
    }
    if (bias) {
      for (Dim c = 0; c < d.out_ch; ++c) {
        T* row = yb + c * P;
        const T v = bias[c];
        for (Dim p = 0; p < P; ++p) row[p] += v;
      }
    }
  }
}

/// dx = conv_backward(dy, w).  Overwrites dx.
template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, const Conv2dDims& d) {
  detail::validate(d);
  const Dim P = d.height * d.width;
  const Dim cg = d.in_ch / d.groups;
  const Dim og = d.out_ch / d.groups;
  const Dim kk = d.ksize * d.ksize;
  T* col = nullptr;
  if (d.ksize > 1) col = detail::scratch<T>(std::size_t(cg * kk * P)).data();
  for (Dim b = 0; b < d.batch; ++b) {
    const T* dyb = dy + b * d.out_ch * P;
    T* dxb = dx + b * d.in_ch * P;
    for (Dim g = 0; g < d.groups; ++g) {
      const T* wg = w + g * og * cg * kk;
      const T* dyg = dyb + g * og * P;
      if (d.ksize == 1) {
        gemm_tn(wg, dyg, dxb + g * cg * P, cg, og, P);
      } else {
        gemm_tn(wg, dyg, col, cg * kk, og, P);
        std::memset(dxb + g * cg * P, 0, sizeof(T) * std::size_t(cg * P));
        detail::col2im_add(col, g * cg, cg, d.in_ch, d.height, d.width, d.ksize, dxb);
      }
    }
  }
}

/// Accumulates dw += x (*) dy and dbias += sum(dy).  dw and dbias must be
/// zeroed by the caller before the first accumulation; sharing a weight
/// across several calls sums its gradient naturally.
template <typename T>
void conv2d_backward_params(const T* x, const T* dy, T* dw, T* dbias, const Conv2dDims& d) {
  detail::validate(d);
  const Dim P = d.height * d.width;
  const Dim cg = d.in_ch / d.groups;
  const Dim og = d.out_ch / d.groups;
  const Dim kk = d.ksize * d.ksize;
  T* col = nullptr;
  if (d.ksize > 1) col = detail::scratch<T>(std::size_t(cg * kk * P)).data();
  for (Dim b = 0; b < d.batch; ++b) {
    const T* xb = x + b * d.in_ch * P;
    const T* dyb = dy + b * d.out_ch * P;
    for (Dim g = 0; g < d.groups; ++g) {
      const T* dyg = dyb + g * og * P;
      T* dwg = dw + g * og * cg * kk;
      if (d.ksize == 1) {
        gemm_nt(dyg, xb + g * cg * P, dwg, og, P, cg, /*acc=*/true);
      } else {
        detail::im2col(xb, g * cg, cg, d.in_ch, d.height, d.width, d.ksize, col);
        gemm_nt(dyg, col, dwg, og, P, cg * kk, /*acc=*/true);
      }
    }
    if (dbias) {
      for (Dim c = 0; c < d.out_ch; ++c) {
        const T* row = dyb + c * P;
        T s = 0;
        for (Dim p = 0; p < P; ++p) s += row[p];
        dbias[c] += s;
      }
    }
  }
}

/// Depthwise 3x3 convolution (one filter per channel), stride 1, zero padding.
/// x, y: (C, H, W); w: (C, 3, 3); bias: (C) or nullptr.
template <typename T>
void depthwise3x3_forward(const T* x, const T* w, const T* bias, T* y, Dim C, Dim H, Dim W) {
  for (Dim c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    const T* wc = w + c * 9;
    T* yc = y + c * H * W;
    const T b = bias ? bias[c] : T(0);
    for (Dim i = 0; i < H; ++i) {
      for (Dim j = 0; j < W; ++j) {
        T s = b;
        for (Dim dy = 0; dy < 3; ++dy) {
          const Dim iy = i + dy - 1;
          if (iy < 0 || iy >= H) continue;
          for (Dim dx = 0; dx < 3; ++dx) {
            const Dim ix = j + dx - 1;
            if (ix < 0 || ix >= W) continue;
            s += wc[dy * 3 + dx] * xc[iy * W + ix];
          }
        }
        yc[i * W + j] = s;
      }
    }
  }
}

/// Backward of depthwise3x3_forward.  dx is overwritten; dw/dbias accumulate.
template <typename T>
void depthwise3x3_backward(const T* x, const T* dy, const T* w, T* dx, T* dw, T* dbias, Dim C,
                           Dim H, Dim W) {
  std::memset(dx, 0, sizeof(T) * std::size_t(C * H * W));
  for (Dim c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    const T* dyc = dy + c * H * W;
    const T* wc = w + c * 9;
    T* dxc = dx + c * H * W;
    T* dwc = dw + c * 9;
    T dbc = 0;
    for (Dim i = 0; i < H; ++i) {
      for (Dim j = 0; j < W; ++j) {
        const T g = dyc[i * W + j];
        dbc += g;
        for (Dim dy_ = 0; dy_ < 3; ++dy_) {
          const Dim iy = i + dy_ - 1;
          if (iy < 0 || iy >= H) continue;
          for (Dim dx_ = 0; dx_ < 3; ++dx_) {
            const Dim ix = j + dx_ - 1;
            if (ix < 0 || ix >= W) continue;
            dwc[dy_ * 3 + dx_] += g * xc[iy * W + ix];
            dxc[iy * W + ix] += g * wc[dy_ * 3 + dx_];
          }
        }
      }
    }
    if (dbias) dbias[c] += dbc;
  }
}

/// 2x2 average pooling, stride 2.  H and W must be even.
template <typename T>
void avgpool2_forward(const T* x, T* y, Dim C, Dim H, Dim W) {
  require(H % 2 == 0 && W % 2 == 0, "avgpool2: extents must be even");
  const Dim Ho = H / 2, Wo = W / 2;
  for (Dim c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    T* yc = y + c * Ho * Wo;
    for (Dim i = 0; i < Ho; ++i)
      for (Dim j = 0; j < Wo; ++j) {
        const T* p = xc + (2 * i) * W + 2 * j;
        yc[i * Wo + j] = (p[0] + p[1] + p[W] + p[W + 1]) * T(0.25);
      }
  }
}

template <typename T>
void avgpool2_backward(const T* dy, T* dx, Dim C, Dim H, Dim W) {
  const Dim Ho = H / 2, Wo = W / 2;
  for (Dim c = 0; c < C; ++c) {
    const T* dyc = dy + c * Ho * Wo;
    T* dxc = dx + c * H * W;
    for (Dim i = 0; i < Ho; ++i)
      for (Dim j = 0; j < Wo; ++j) {
        const T g = dyc[i * Wo + j] * T(0.25);
        T* p = dxc + (2 * i) * W + 2 * j;
        p[0] = g;
        p[1] = g;
        p[W] = g;
        p[W + 1] = g;
      }
  }
}

namespace detail {

/// Source taps for 2x bilinear upsampling (half-pixel centers, edges clamped).
struct UpTap {
  Dim i0, i1;
  double w0, w1;
};

inline UpTap up2_tap(Dim o, Dim n) {
  const double src = 0.5 * double(o) - 0.25;
  double f = src - std::floor(src);
  Dim i0 = Dim(std::floor(src));
  Dim i1 = i0 + 1;
  if (i0 < 0) i0 = 0;
  if (i1 > n - 1) i1 = n - 1;
  if (i0 > n - 1) i0 = n - 1;
  return {i0, i1, 1.0 - f, f};
}

}  // namespace detail

/// Bilinear 2x upsampling with half-pixel alignment.  x: (C,H,W) -> y: (C,2H,2W).
template <typename T>
void upsample2_forward(const T* x, T* y, Dim C, Dim H, Dim W) {
  const Dim Ho = 2 * H, Wo = 2 * W;
  std::vector<detail::UpTap> ty(static_cast<std::size_t>(Ho));
  std::vector<detail::UpTap> tx(static_cast<std::size_t>(Wo));
  for (Dim o = 0; o < Ho; ++o) ty[std::size_t(o)] = detail::up2_tap(o, H);
  for (Dim o = 0; o < Wo; ++o) tx[std::size_t(o)] = detail::up2_tap(o, W);
  for (Dim c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    T* yc = y + c * Ho * Wo;
    for (Dim i = 0; i < Ho; ++i) {
      const auto& a = ty[std::size_t(i)];
      const T* r0 = xc + a.i0 * W;
      const T* r1 = xc + a.i1 * W;
      for (Dim j = 0; j < Wo; ++j) {
        const auto& b = tx[std::size_t(j)];
        const double v = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) +
                         a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
        yc[i * Wo + j] = T(v);
      }
    }
  }
}

/// Adjoint of upsample2_forward.  dx is overwritten.
template <typename T>
void upsample2_backward(const T* dy, T* dx, Dim C, Dim H, Dim W) {
  const Dim Ho = 2 * H, Wo = 2 * W;
  std::vector<detail::UpTap> ty(static_cast<std::size_t>(Ho));
  std::vector<detail::UpTap> tx(static_cast<std::size_t>(Wo));
  for (Dim o = 0; o < Ho; ++o) ty[std::size_t(o)] = detail::up2_tap(o, H);
  for (Dim o = 0; o < Wo; ++o) tx[std::size_t(o)] = detail::up2_tap(o, W);
  std::memset(dx, 0, sizeof(T) * std::size_t(C * H * W));
  for (Dim c = 0; c < C; ++c) {
    const T* dyc = dy + c * Ho * Wo;
    T* dxc = dx + c * H * W;
    for (Dim i = 0; i < Ho; ++i) {
      const auto& a = ty[std::size_t(i)];
      for (Dim j = 0; j < Wo; ++j) {
        const auto& b = tx[std::size_t(j)];
        const T g = dyc[i * Wo + j];
        dxc[a.i0 * W + b.i0] += T(a.w0 * b.w0) * g;
        dxc[a.i0 * W + b.i1] += T(a.w0 * b.w1) * g;
        dxc[a.i1 * W + b.i0] += T(a.w1 * b.w0) * g;
        dxc[a.i1 * W + b.i1] += T(a.w1 * b.w1) * g;
      }
    }
  }
}

template <typename T>
void relu_forward(const T* x, T* y, Dim n) {
  for (Dim i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

/// dx = dy where x > 0, else 0.  Safe to alias dx with dy.
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, Dim n) {
  for (Dim i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

/// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))).
template <typename T>
void gelu_forward(const T* x, T* y, Dim n) {
  for (Dim i = 0; i < n; ++i) {
    const double v = double(x[i]);
    y[i] = T(0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)));
  }
}

template <typename T>
void gelu_backward(const T* x, const T* dy, T* dx, Dim n) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  for (Dim i = 0; i < n; ++i) {
    const double v = double(x[i]);
    const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
    dx[i] = T((cdf + v * pdf) * double(dy[i]));
  }
}

/// LayerNorm across channels, independently at each pixel.  x: (C, P) with P
/// pixels; gamma/beta: (C).  Caches normalized values and inverse stddev for
/// the backward pass.  Variance is biased (divide by C).
template <typename T>
void layernorm_forward(const T* x, const T* gamma, const T* beta, T* y, T* xhat, T* inv_std, Dim C,
                       Dim P, double eps = 1e-5) {
  for (Dim p = 0; p < P; ++p) {
    double mean = 0;
    for (Dim c = 0; c < C; ++c) mean += double(x[c * P + p]);
    mean /= double(C);
    double var = 0;
    for (Dim c = 0; c < C; ++c) {
      const double d = double(x[c * P + p]) - mean;
      var += d * d;
    }
    var /= double(C);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[p] = T(inv);
    for (Dim c = 0; c < C; ++c) {
      const double h = (double(x[c * P + p]) - mean) * inv;
      xhat[c * P + p] = T(h);
      y[c * P + p] = T(h * double(gamma[c]) + double(beta[c]));
    }
  }
}

/// Backward of layernorm_forward.  dx is overwritten; dgamma/dbeta accumulate.
template <typename T>
void layernorm_backward(const T* dy, const T* xhat, const T* inv_std, const T* gamma, T* dx,
                        T* dgamma, T* dbeta, Dim C, Dim P) {
  for (Dim p = 0; p < P; ++p) {
    double sum_g = 0, sum_gx = 0;
    for (Dim c = 0; c < C; ++c) {
      const double g = double(dy[c * P + p]) * double(gamma[c]);
      sum_g += g;
      sum_gx += g * double(xhat[c * P + p]);
    }
    const double inv = double(inv_std[p]);
    for (Dim c = 0; c < C; ++c) {
      const double g = double(dy[c * P + p]) * double(gamma[c]);
      const double h = double(xhat[c * P + p]);
      dx[c * P + p] = T(inv * (g - (sum_g + h * sum_gx) / double(C)));
    }
  }
  for (Dim c = 0; c < C; ++c) {
    double dg = 0, db = 0;
    for (Dim p = 0; p < P; ++p) {
      dg += double(dy[c * P + p]) * double(xhat[c * P + p]);
      db += double(dy[c * P + p]);
    }
    dgamma[c] += T(dg);
    dbeta[c] += T(db);
  }
}

/// Row-wise softmax over an (R, C) matrix; numerically shifted by the row max.
template <typename T>
void softmax_rows_forward(const T* x, T* y, Dim R, Dim C) {
  for (Dim r = 0; r < R; ++r) {
    const T* xr = x + r * C;
    T* yr = y + r * C;
    double mx = double(xr[0]);
    for (Dim c = 1; c < C; ++c) mx = std::max(mx, double(xr[c]));
    double sum = 0;
    for (Dim c = 0; c < C; ++c) {
      const double e = std::exp(double(xr[c]) - mx);
      yr[c] = T(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (Dim c = 0; c < C; ++c) yr[c] = T(double(yr[c]) * inv);
  }
}

/// dx = y .* (dy - rowsum(y .* dy)).  Safe to alias dx with dy.
template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, Dim R, Dim C) {
  for (Dim r = 0; r < R; ++r) {
    const T* yr = y + r * C;
    const T* gr = dy + r * C;
    T* dr = dx + r * C;
    double dot = 0;
    for (Dim c = 0; c < C; ++c) dot += double(yr[c]) * double(gr[c]);
    for (Dim c = 0; c < C; ++c) dr[c] = T(double(yr[c]) * (double(gr[c]) - dot));
  }
}

}  // namespace contifuse::nn
