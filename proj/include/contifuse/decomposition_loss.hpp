#pragma once

#include <type_traits>
#include <vector>

#include "contifuse/constraints.hpp"
#include "contifuse/correlation.hpp"
#include "contifuse/decay.hpp"
#include "contifuse/distance_matrix.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

struct DecompositionSettings {
  DecayKind decay = DecayKind::gaussian;
  SpanConvention span = SpanConvention::corner;
};

namespace detail {

/// Sizes each gradient buffer to its stack's shape (zeroing it) unless it
/// already matches, in which case existing content is kept so contributions
/// accumulate.
template <typename T>
void prepare_stack_grads(const std::vector<Tensor<T>>& stacks, std::vector<Tensor<T>>* grads) {
  if (!grads) return;
  grads->resize(stacks.size());
  for (std::size_t l = 0; l < stacks.size(); ++l)
    if (!(*grads)[l].same_dims(stacks[l])) (*grads)[l] = Tensor<T>(stacks[l].dims());
}

/// Shared core of both loss modes: sum of weight * (Gamma(u,v) - target)^2
/// over the given pairs of one layer's stack.  The target floor mu is the
/// endpoint correlation, clamped, and treated as a constant (no gradient
/// shapes the target).  If grad is non-null, accumulates the gradient of the
/// weighted sum into it.
template <typename T>
double constrained_layer_loss(const Tensor<T>& stack, const std::vector<ConstraintPair>& pairs,
                              double weight, const DecompositionSettings& s, EvalCounter* counter,
                              Tensor<T>* grad, double* mu_out, const double* frozen_mu) {
  require(stack.rank() == 4, "layer stack must be (S, C, H, W)");
  const Dim S = stack.dim(0);
  const Dim K = S - 2;
  require(K >= 1, "layer stack needs at least 3 states");
  const Dim C = stack.dim(1);
  const Dim P = stack.dim(2) * stack.dim(3);
  const double mu = frozen_mu
                        ? *frozen_mu
                        : clamp_mu(gamma_between_states(stack, 0, K + 1, counter, /*is_mu=*/true));
  if (mu_out) *mu_out = mu;
  const double span = decay_span(K, s.span);
  double loss = 0;
  for (const ConstraintPair& pr : pairs) {
    require(pr.u > pr.v && pr.u <= K + 1 && pr.v >= 0, "constraint pair out of range");
    const double target = apply_decay(s.decay, double(pr.u - pr.v), mu, span);
    const double g = gamma_between_states(stack, pr.u, pr.v, counter);
    const double err = g - target;
    loss += weight * err * err;
    if (grad) {
      const double up = 2.0 * weight * err;
      gamma_distance_backward(stack.data() + pr.u * C * P, stack.data() + pr.v * C * P, C, P, up,
                              grad->data() + pr.u * C * P, grad->data() + pr.v * C * P);
    }
  }
  return loss;
}

}  // namespace detail

/// Full-matrix decomposition loss: squared deviation of measured from target
/// correlations over every constrained entry (both triangles, diagonal and
/// the (K+1,0)/(0,K+1) corners excluded), averaged over the N layers.  Each
/// lower-triangle term is doubled so the K^2+3K normalizer covers the
/// symmetric matrix.
///
/// The target floor mu is a constant of the evaluation: gradients never flow
/// through the target matrix.  `frozen_mus` supplies the constants explicitly
/// (one per layer); when null they are measured from the stack endpoints.
/// Finite-difference validation of the gradients must freeze mu, since the
/// derivative being checked is defined at fixed targets.
template <typename T>
double decomposition_loss_full(const std::vector<Tensor<T>>& stacks,
                               const DecompositionSettings& s, EvalCounter* counter = nullptr,
                               std::type_identity_t<std::vector<Tensor<T>>*> grads = nullptr,
                               std::vector<double>* mus = nullptr,
                               const std::vector<double>* frozen_mus = nullptr) {
  require(!stacks.empty(), "decomposition loss needs at least one layer stack");
  require(!frozen_mus || frozen_mus->size() == stacks.size(),
          "frozen_mus must provide one value per layer");
  detail::prepare_stack_grads(stacks, grads);
  const Dim N = Dim(stacks.size());
  if (mus) mus->assign(stacks.size(), 0.0);
  double loss = 0;
  for (Dim l = 0; l < N; ++l) {
    const Dim K = stacks[std::size_t(l)].dim(0) - 2;
    const auto pairs = full_constraints(K);
    const double weight = 2.0 / (double(N) * double(K * K + 3 * K));
    loss += detail::constrained_layer_loss(stacks[std::size_t(l)], pairs, weight, s, counter,
                                           grads ? &(*grads)[std::size_t(l)] : nullptr,
                                           mus ? &(*mus)[std::size_t(l)] : nullptr,
                                           frozen_mus ? &(*frozen_mus)[std::size_t(l)] : nullptr);
  }
  return loss;
}

/// Sampled decomposition loss: mean squared deviation over each layer's
/// constraint set only, averaged over layers.  Linear cost in K.  mu handling
/// as in decomposition_loss_full.
template <typename T>
double decomposition_loss_sds(const std::vector<Tensor<T>>& stacks,
                              const std::vector<std::vector<ConstraintPair>>& sets,
                              const DecompositionSettings& s, EvalCounter* counter = nullptr,
                              std::type_identity_t<std::vector<Tensor<T>>*> grads = nullptr,
                              std::vector<double>* mus = nullptr,
                              const std::vector<double>* frozen_mus = nullptr) {
  require(!stacks.empty(), "decomposition loss needs at least one layer stack");
  require(sets.size() == stacks.size(), "one constraint set per layer required");
  require(!frozen_mus || frozen_mus->size() == stacks.size(),
          "frozen_mus must provide one value per layer");
  detail::prepare_stack_grads(stacks, grads);
  const Dim N = Dim(stacks.size());
  if (mus) mus->assign(stacks.size(), 0.0);
  double loss = 0;
  for (Dim l = 0; l < N; ++l) {
    const auto& pairs = sets[std::size_t(l)];
    require(!pairs.empty(), "empty constraint set");
    const double weight = 1.0 / (double(N) * double(pairs.size()));
    loss += detail::constrained_layer_loss(stacks[std::size_t(l)], pairs, weight, s, counter,
                                           grads ? &(*grads)[std::size_t(l)] : nullptr,
                                           mus ? &(*mus)[std::size_t(l)] : nullptr,
                                           frozen_mus ? &(*frozen_mus)[std::size_t(l)] : nullptr);
  }
  return loss;
}

}  // namespace contifuse
