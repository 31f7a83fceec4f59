#pragma once

#include "contifuse/tensor.hpp"

namespace contifuse {

/// Symmetric (edge-duplicating) extension index: 0,1,...,n-1,n-1,...,1,0,...
/// with period 2n.  A 1-wide axis extends as a constant.
inline Dim fold_index(Dim i, Dim n) {
  const Dim p = 2 * n;
  Dim m = i % p;
  if (m < 0) m += p;
  return m < n ? m : p - 1 - m;
}

/// Pads an (H, W) image on the bottom and right with symmetric extension so
/// both extents become multiples of `multiple`.  Content keeps its position:
/// cropping the result back to (H, W) at (0, 0) recovers the input exactly.
template <typename T>
Tensor<T> pad_to_multiple(const Tensor<T>& x, Dim multiple) {
  require(x.rank() == 2, "pad_to_multiple: image must be H x W");
  require(multiple >= 1, "pad_to_multiple: multiple must be positive");
  const Dim H = x.dim(0), W = x.dim(1);
  const Dim Hp = (H + multiple - 1) / multiple * multiple;
  const Dim Wp = (W + multiple - 1) / multiple * multiple;
  if (Hp == H && Wp == W) return x;
  Tensor<T> y({Hp, Wp});
  for (Dim i = 0; i < Hp; ++i) {
    const Dim si = fold_index(i, H);
    for (Dim j = 0; j < Wp; ++j) y(i, j) = x(si, fold_index(j, W));
  }
  return y;
}

/// Pads an (H, W) image on the bottom/right up to at least (h, w).
template <typename T>
Tensor<T> pad_to_size(const Tensor<T>& x, Dim h, Dim w) {
  require(x.rank() == 2, "pad_to_size: image must be H x W");
  const Dim H = x.dim(0), W = x.dim(1);
  const Dim Hp = std::max(H, h), Wp = std::max(W, w);
  if (Hp == H && Wp == W) return x;
  Tensor<T> y({Hp, Wp});
  for (Dim i = 0; i < Hp; ++i) {
    const Dim si = fold_index(i, H);
    for (Dim j = 0; j < Wp; ++j) y(i, j) = x(si, fold_index(j, W));
  }
  return y;
}

/// Top-left crop back to (h, w).
template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& x, Dim h, Dim w) {
  require(x.rank() == 2 && h <= x.dim(0) && w <= x.dim(1), "crop_top_left: target too large");
  Tensor<T> y({h, w});
  for (Dim i = 0; i < h; ++i)
    for (Dim j = 0; j < w; ++j) y(i, j) = x(i, j);
  return y;
}

}  // namespace contifuse
