#pragma once

#include <type_traits>
#include <vector>

#include "contifuse/decomposition_loss.hpp"
#include "contifuse/pixel_loss.hpp"

namespace contifuse {

enum class LossMode { sds, full };

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "sds") return LossMode::sds;
  if (s == "full") return LossMode::full;
  throw ContractError("unknown loss mode: '" + s + "' (expected sds|full)");
}

inline const char* loss_mode_name(LossMode m) { return m == LossMode::sds ? "sds" : "full"; }

struct LossWeights {
  double alpha_intensity = 15.0;
  double alpha_gradient = 15.0;
};

struct LossBreakdown {
  double decomposition = 0;
  double intensity = 0;
  double gradient = 0;
  double total = 0;
  std::vector<double> mu;  // per-layer target floors, for logging
};

/// Combined objective for one sample: decomposition + alpha1 * intensity +
/// alpha2 * gradient.  In sds mode `sets` supplies one constraint set per
/// layer; full mode ignores it.  When gradients are requested, gf accumulates
/// dL/dF and gstacks accumulates dL/dZ per layer.  frozen_mus pins the
/// per-layer target floors (see decomposition_loss_full).
template <typename T>
LossBreakdown total_loss(const Tensor<T>& fused, const Tensor<T>& ir, const Tensor<T>& vis,
                         const std::vector<Tensor<T>>& stacks, const LossWeights& w, LossMode mode,
                         const std::vector<std::vector<ConstraintPair>>& sets,
                         const DecompositionSettings& ds, EvalCounter* counter = nullptr,
                         std::type_identity_t<Tensor<T>*> gf = nullptr,
                         std::type_identity_t<std::vector<Tensor<T>>*> gstacks = nullptr,
                         const std::vector<double>* frozen_mus = nullptr) {
  require(w.alpha_intensity >= 0 && w.alpha_gradient >= 0, "loss weights must be non-negative");
  require(fused.rank() == 2 && ir.same_dims(fused) && vis.same_dims(fused),
          "total_loss: images must share one H x W shape");
  const Dim H = fused.dim(0), W = fused.dim(1);
  if (gf && !gf->same_dims(fused)) *gf = Tensor<T>({H, W});
  LossBreakdown out;
  if (mode == LossMode::sds)
    out.decomposition =
        decomposition_loss_sds(stacks, sets, ds, counter, gstacks, &out.mu, frozen_mus);
  else
    out.decomposition =
        decomposition_loss_full(stacks, ds, counter, gstacks, &out.mu, frozen_mus);
  out.intensity = intensity_loss(fused.data(), ir.data(), vis.data(), H, W, w.alpha_intensity,
                                 gf ? gf->data() : nullptr);
  out.gradient = gradient_loss(fused.data(), ir.data(), vis.data(), H, W, w.alpha_gradient,
                               gf ? gf->data() : nullptr);
  out.total = out.decomposition + w.alpha_intensity * out.intensity + w.alpha_gradient * out.gradient;
  return out;
}

}  // namespace contifuse
