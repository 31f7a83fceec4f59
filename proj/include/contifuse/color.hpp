#pragma once

#include "contifuse/common.hpp"

namespace contifuse {

/// Full-range BT.601 YCbCr on [0,1] values, chroma centered at 0.5.  The
/// chroma terms are written as (B-Y)/1.772 and (R-Y)/1.402 so the inverse
/// below reconstructs R and B algebraically and G through the luma relation,
/// keeping 8-bit round trips within one code value.
template <typename T>
void rgb_to_ycbcr(T r, T g, T b, T& y, T& cb, T& cr) {
  y = T(0.299) * r + T(0.587) * g + T(0.114) * b;
  cb = (b - y) / T(1.772) + T(0.5);
  cr = (r - y) / T(1.402) + T(0.5);
}

template <typename T>
void ycbcr_to_rgb(T y, T cb, T cr, T& r, T& g, T& b) {
  r = y + T(1.402) * (cr - T(0.5));
  b = y + T(1.772) * (cb - T(0.5));
  g = (y - T(0.299) * r - T(0.114) * b) / T(0.587);
}

/// BT.601 luma of an RGB triple on [0,1].
template <typename T>
T luma(T r, T g, T b) {
  return T(0.299) * r + T(0.587) * g + T(0.114) * b;
}

}  // namespace contifuse
