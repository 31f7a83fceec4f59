#pragma once

#include "contifuse/dataset.hpp"
#include "contifuse/pad.hpp"
#include "contifuse/rng.hpp"

namespace contifuse {

struct AugmentationPolicy {
  Dim crop_size = 192;
  double hflip_prob = 0.5;
  double vflip_prob = 0.0;

  void validate() const {
    require(crop_size >= 1, "augment: crop_size must be positive");
    require(hflip_prob >= 0 && hflip_prob <= 1, "augment: hflip_prob must be in [0,1]");
    require(vflip_prob >= 0 && vflip_prob <= 1, "augment: vflip_prob must be in [0,1]");
  }
};

template <typename T>
void flip_horizontal_inplace(Tensor<T>& x) {
  const Dim H = x.dim(0), W = x.dim(1);
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W / 2; ++j) std::swap(x(i, j), x(i, W - 1 - j));
}

template <typename T>
void flip_vertical_inplace(Tensor<T>& x) {
  const Dim H = x.dim(0), W = x.dim(1);
  for (Dim i = 0; i < H / 2; ++i)
    for (Dim j = 0; j < W; ++j) std::swap(x(i, j), x(H - 1 - i, j));
}

/// One sampled crop window plus flips.  The draw order (row offset, column
/// offset, horizontal flip, vertical flip) is part of the reproducibility
/// contract: a given generator state yields a bit-identical augmentation.
struct CropDraw {
  Dim row = 0, col = 0;
  bool hflip = false, vflip = false;
};

inline CropDraw draw_crop(Dim padded_h, Dim padded_w, const AugmentationPolicy& pol, Rng& rng) {
  CropDraw d;
  d.row = Dim(rng.below(std::uint64_t(padded_h - pol.crop_size + 1)));
  d.col = Dim(rng.below(std::uint64_t(padded_w - pol.crop_size + 1)));
  d.hflip = rng.bernoulli(pol.hflip_prob);
  d.vflip = rng.bernoulli(pol.vflip_prob);
  return d;
}

/// Applies a draw to one plane (already at least crop_size in each extent).
template <typename T>
Tensor<T> apply_crop(const Tensor<T>& plane, const CropDraw& d, Dim crop) {
  Tensor<T> out({crop, crop});
  for (Dim i = 0; i < crop; ++i)
    for (Dim j = 0; j < crop; ++j) out(i, j) = plane(d.row + i, d.col + j);
  if (d.hflip) flip_horizontal_inplace(out);
  if (d.vflip) flip_vertical_inplace(out);
  return out;
}

/// Identical random crop and flips for the two registered modalities.
/// Undersized images are symmetric-padded up to the crop size first.
template <typename T>
void augment_pair(const Tensor<T>& ir, const Tensor<T>& vis, const AugmentationPolicy& pol,
                  Rng& rng, Tensor<T>& ir_out, Tensor<T>& vis_out) {
  pol.validate();
  require(ir.rank() == 2 && ir.same_dims(vis), "augment: modalities must be equal H x W images");
  const Dim c = pol.crop_size;
  const Tensor<T> irp = pad_to_size(ir, c, c);
  const Tensor<T> visp = pad_to_size(vis, c, c);
  const CropDraw d = draw_crop(irp.dim(0), irp.dim(1), pol, rng);
  ir_out = apply_crop(irp, d, c);
  vis_out = apply_crop(visp, d, c);
}

/// Same, over all four planes of a loaded pair.
template <typename T>
ImagePair<T> augment(const ImagePair<T>& p, const AugmentationPolicy& pol, Rng& rng) {
  pol.validate();
  const Dim c = pol.crop_size;
  const Tensor<T> planes[4] = {pad_to_size(p.ir, c, c), pad_to_size(p.vis, c, c),
                               pad_to_size(p.cb, c, c), pad_to_size(p.cr, c, c)};
  const CropDraw d = draw_crop(planes[0].dim(0), planes[0].dim(1), pol, rng);

  ImagePair<T> out;
  out.id = p.id;
  out.color = p.color;
  out.ir = apply_crop(planes[0], d, c);
  out.vis = apply_crop(planes[1], d, c);
  out.cb = apply_crop(planes[2], d, c);
  out.cr = apply_crop(planes[3], d, c);
  return out;
}

}  // namespace contifuse
