#pragma once

#include <string>
#include <vector>

#include "contifuse/color.hpp"
#include "contifuse/dataset.hpp"
#include "contifuse/image_io.hpp"
#include "contifuse/model.hpp"
#include "contifuse/pad.hpp"

namespace contifuse {

/// Fuses one registered pair at its native size: pad both inputs to the
/// network's stride multiple, run the forward pass, crop back, and clamp the
/// result to [0,1].
template <typename T>
Tensor<T> fuse_luma(FusionNet<T>& net, const Tensor<T>& ir, const Tensor<T>& vis) {
  require(ir.rank() == 2 && ir.same_dims(vis), "fuse: inputs must be equal H x W images");
  const Dim H = ir.dim(0), W = ir.dim(1);
  const Dim s = net.config().stride();
  Tensor<T> fused = net.forward(pad_to_multiple(ir, s), pad_to_multiple(vis, s)).fused;
  if (fused.dim(0) != H || fused.dim(1) != W) fused = crop_top_left(fused, H, W);
  for (Dim i = 0; i < fused.numel(); ++i)
    fused[i] = fused[i] < T(0) ? T(0) : (fused[i] > T(1) ? T(1) : fused[i]);
  return fused;
}

/// 8-bit rendering of a fused luma plane.  Color pairs get their chroma
/// reattached unless grayscale output is forced.
template <typename T>
ImageU8 render_fused(const Tensor<T>& fused, const ImagePair<T>& pair, bool force_gray) {
  require(fused.same_dims(pair.ir), "render: fused plane must match the pair size");
  if (force_gray || !pair.color) return quantize_gray(fused);

  ImageU8 out;
  out.height = fused.dim(0);
  out.width = fused.dim(1);
  out.channels = 3;
  out.pixels.resize(std::size_t(fused.numel() * 3));
  auto q = [](double v) {
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    return std::uint8_t(v * 255.0 + 0.5);
  };
  for (Dim i = 0; i < fused.numel(); ++i) {
    double r, g, b;
    ycbcr_to_rgb(double(fused[i]), double(pair.cb[i]), double(pair.cr[i]), r, g, b);
    out.pixels[std::size_t(3 * i) + 0] = q(r);
    out.pixels[std::size_t(3 * i) + 1] = q(g);
    out.pixels[std::size_t(3 * i) + 2] = q(b);
  }
  return out;
}

/// Per-state visualizations of one layer's transition stack: the channel
/// mean of each state, min-max normalized per state (a flat state renders
/// black), ordered Z_0 .. Z_{K+1}.
template <typename T>
std::vector<ImageU8> dump_state_images(FusionNet<T>& net, const Tensor<T>& ir,
                                       const Tensor<T>& vis, Dim layer) {
  require(ir.rank() == 2 && ir.same_dims(vis), "dump: inputs must be equal H x W images");
  require(layer >= 1 && layer <= net.config().num_layers,
          "dump: layer must be in 1.." + std::to_string(net.config().num_layers));
  const Dim s = net.config().stride();
  const auto& out = net.forward(pad_to_multiple(ir, s), pad_to_multiple(vis, s));
  const Tensor<T>& Z = out.stacks[std::size_t(layer - 1)];
  const Dim S = Z.dim(0), C = Z.dim(1), H = Z.dim(2), W = Z.dim(3);

  std::vector<ImageU8> images;
  images.reserve(std::size_t(S));
  for (Dim st = 0; st < S; ++st) {
    Tensor<double> mean({H, W});
    for (Dim c = 0; c < C; ++c)
      for (Dim i = 0; i < H; ++i)
        for (Dim j = 0; j < W; ++j) mean(i, j) += double(Z(st, c, i, j)) / double(C);
    double lo = mean[0], hi = mean[0];
    for (Dim i = 0; i < mean.numel(); ++i) {
      lo = std::min(lo, mean[i]);
      hi = std::max(hi, mean[i]);
    }
    if (hi > lo)
      for (Dim i = 0; i < mean.numel(); ++i) mean[i] = (mean[i] - lo) / (hi - lo);
    else
      mean.zero();
    images.push_back(quantize_gray(mean));
  }
  return images;
}

}  // namespace contifuse
