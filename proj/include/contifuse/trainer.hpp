#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "contifuse/adamw.hpp"
#include "contifuse/augment.hpp"
#include "contifuse/checkpoint.hpp"
#include "contifuse/dataset.hpp"
#include "contifuse/model.hpp"
#include "contifuse/schedule.hpp"
#include "contifuse/total_loss.hpp"

namespace contifuse {

struct TrainConfig {
  Dim batch_size = 20;
  Dim epochs = 250;
  double lr_start = 1e-5;
  double lr_peak = 6e-5;
  double lr_final = 5e-6;
  Dim warmup_epochs = 50;
  double clip_max_norm = 1.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  LossMode loss_mode = LossMode::sds;
  DecompositionSettings decomposition;
  LossWeights weights;
  Dim checkpoint_every = 50;  // epochs between periodic checkpoints

  void validate() const {
    require(batch_size >= 1, "train: batch_size must be positive");
    require(epochs >= 0, "train: epochs must be non-negative");
    require(lr_start <= lr_peak, "train: lr_start must not exceed lr_peak");
    require(warmup_epochs >= 0, "train: warmup_epochs must be non-negative");
    require(epochs == 0 || warmup_epochs < epochs, "train: warmup_epochs must be below epochs");
    require(clip_max_norm > 0, "train: clip_max_norm must be positive");
    require(weight_decay >= 0, "train: weight_decay must be non-negative");
    require(checkpoint_every >= 1, "train: checkpoint_every must be positive");
  }
};

/// One registered pair, reduced to the planes training consumes.
template <typename T>
struct TrainSample {
  std::string id;
  Tensor<T> ir;   // (H, W) in [0,1]
  Tensor<T> vis;  // (H, W) luma in [0,1]
};

template <typename T>
std::vector<TrainSample<T>> load_train_samples(const std::vector<PairRecord>& records) {
  std::vector<TrainSample<T>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    ImagePair<T> p = load_pair<T>(r);
    out.push_back({p.id, std::move(p.ir), std::move(p.vis)});
  }
  return out;
}

struct StepLog {
  Dim step = 0;   // global step, 0-based
  Dim epoch = 0;  // 0-based epoch this step belongs to
  double lr = 0;
  double total = 0;
  double decomposition = 0;
  double intensity = 0;
  double gradient = 0;
  double grad_norm = 0;  // pre-clip global norm
  double seconds = 0;
};

inline const char* step_log_header() {
  return "step,epoch,lr,loss_total,loss_decomposition,loss_intensity,loss_gradient,grad_norm,seconds";
}

/// Deterministic columns use full round-trip precision; seconds is wall time
/// and is excluded from any reproducibility comparison.
inline std::string format_step_log(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f",
                static_cast<long long>(s.step), static_cast<long long>(s.epoch), s.lr, s.total,
                s.decomposition, s.intensity, s.gradient, s.grad_norm, s.seconds);
  return buf;
}

/// Epoch-driven training loop.  All randomness is drawn from streams derived
/// from (seed, purpose, coordinates), never from a single advancing generator,
/// so a resumed run replays the exact remaining stream: shuffles are keyed by
/// epoch, crops by (epoch, dataset index), and SDS constraint sets by
/// (step, layer), the last shared across the batch.
template <typename T>
class Trainer {
 public:
  Trainer(FusionNet<T>& net, TrainConfig cfg, std::vector<TrainSample<T>> samples,
          AugmentationPolicy aug = {})
      : net_(&net), cfg_(std::move(cfg)), aug_(aug), samples_(std::move(samples)) {
    cfg_.validate();
    aug_.validate();
    require(!samples_.empty(), "train: dataset is empty");
    for (const auto& s : samples_)
      require(s.ir.rank() == 2 && s.ir.same_dims(s.vis),
              "train: sample '" + s.id + "' planes must be equal H x W images");
    opt_.weight_decay = cfg_.weight_decay;
    opt_.attach(net.params());
  }

  const TrainConfig& config() const { return cfg_; }
  const AugmentationPolicy& augmentation() const { return aug_; }
  Dim num_samples() const { return Dim(samples_.size()); }
  Dim steps_per_epoch() const { return (num_samples() + cfg_.batch_size - 1) / cfg_.batch_size; }
  Dim total_steps() const { return cfg_.epochs * steps_per_epoch(); }
  Dim next_epoch() const { return next_epoch_; }
  bool done() const { return next_epoch_ >= cfg_.epochs; }
  const AdamW<T>& optimizer() const { return opt_; }

  double lr_for(Dim step) const {
    return lr_at(step, cfg_.warmup_epochs * steps_per_epoch(), total_steps(), cfg_.lr_start,
                 cfg_.lr_peak, cfg_.lr_final);
  }

  std::vector<std::size_t> shuffle_order(Dim epoch) const {
    std::vector<std::size_t> order(samples_.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng rng(derive_seed({cfg_.seed, seed_tag("shuffle"), std::uint64_t(epoch)}));
    rng.shuffle(order);
    return order;
  }

  /// Runs the next epoch, invoking per_step(const StepLog&) after each batch.
  template <typename PerStep>
  void run_epoch(PerStep&& per_step) {
    require(!done(), "train: all epochs already completed");
    const Dim epoch = next_epoch_;
    const std::vector<std::size_t> order = shuffle_order(epoch);
    const Dim spe = steps_per_epoch();
    for (Dim b = 0; b < spe; ++b) per_step(batch_step(epoch * spe + b, epoch, order, b));
    ++next_epoch_;
  }

  template <typename PerStep>
  void run(PerStep&& per_step) {
    while (!done()) run_epoch(per_step);
  }

  /// Full training state: weights, optimizer moments, and loop position.
  void save_checkpoint(const std::string& path) const {
    Checkpoint ck;
    put_model(ck, *net_);
    const ParamStore<T>& ps = net_->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      ck.put_tensor("adam.m." + ps[i].name, opt_.first_moment(i));
      ck.put_tensor("adam.v." + ps[i].name, opt_.second_moment(i));
    }
    nlohmann::json t;
    t["next_epoch"] = next_epoch_;
    t["adam_t"] = opt_.step_count();
    t["seed"] = cfg_.seed;
    t["num_samples"] = num_samples();
    t["dtype"] = sizeof(T) == 8 ? "f64" : "f32";
    t["config"] = train_config_to_json(cfg_, aug_);
    ck.meta["trainer"] = std::move(t);
    ck.save(path);
  }

  /// Restores a checkpoint written by save_checkpoint and validates that the
  /// continuation is well defined: same precision and same dataset size (the
  /// schedule and the seed streams both depend on steps_per_epoch).
  void load_checkpoint(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (!ck.meta.contains("trainer"))
      throw RuntimeError("checkpoint has no trainer state: " + path);
    const nlohmann::json& t = ck.meta.at("trainer");
    const std::string dtype = t.at("dtype").get<std::string>();
    const std::string want = sizeof(T) == 8 ? "f64" : "f32";
    if (dtype != want)
      throw RuntimeError("checkpoint precision " + dtype + " does not match trainer " + want);
    if (t.at("num_samples").get<Dim>() != num_samples())
      throw RuntimeError("checkpoint was written against a different dataset size");
    load_model(ck, *net_);
    ParamStore<T>& ps = net_->params();
    opt_.attach(ps);  // re-sizes and zeroes the moments
    for (std::size_t i = 0; i < ps.size(); ++i) {
      restore_moment(ck, "adam.m." + ps[i].name, ps[i].value.dims(), opt_.first_moment(i));
      restore_moment(ck, "adam.v." + ps[i].name, ps[i].value.dims(), opt_.second_moment(i));
    }
    opt_.set_step_count(t.at("adam_t").get<Dim>());
    next_epoch_ = t.at("next_epoch").get<Dim>();
  }

  static nlohmann::json train_config_to_json(const TrainConfig& c, const AugmentationPolicy& a) {
    return {{"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"lr_start", c.lr_start},
            {"lr_peak", c.lr_peak},
            {"lr_final", c.lr_final},
            {"warmup_epochs", c.warmup_epochs},
            {"clip_max_norm", c.clip_max_norm},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed},
            {"loss_mode", loss_mode_name(c.loss_mode)},
            {"decay", decay_name(c.decomposition.decay)},
            {"span", span_name(c.decomposition.span)},
            {"alpha_intensity", c.weights.alpha_intensity},
            {"alpha_gradient", c.weights.alpha_gradient},
            {"checkpoint_every", c.checkpoint_every},
            {"crop_size", a.crop_size},
            {"hflip_prob", a.hflip_prob},
            {"vflip_prob", a.vflip_prob}};
  }

 private:
  static void restore_moment(const Checkpoint& ck, const std::string& key,
                             const std::vector<Dim>& dims, Tensor<double>& dst) {
    if (!ck.contains(key)) throw RuntimeError("checkpoint is missing optimizer tensor " + key);
    if (ck.dims(key) != dims) throw RuntimeError("checkpoint shape mismatch for " + key);
    dst = ck.tensor<double>(key);
  }

  StepLog batch_step(Dim step, Dim epoch, const std::vector<std::size_t>& order, Dim b) {
    const auto t0 = std::chrono::steady_clock::now();
    const Dim n = num_samples();
    const Dim lo = b * cfg_.batch_size;
    const Dim hi = std::min(lo + cfg_.batch_size, n);
    const double invb = 1.0 / double(hi - lo);

    std::vector<std::vector<ConstraintPair>> sets;
    if (cfg_.loss_mode == LossMode::sds) {
      sets.resize(std::size_t(net_->config().num_layers));
      for (Dim l = 0; l < net_->config().num_layers; ++l)
        sets[std::size_t(l)] =
            sds_sample(sds_seed(cfg_.seed, std::uint64_t(step), std::uint64_t(l)),
                       net_->config().num_states);
    }

    net_->params().zero_grads();
    StepLog log;
    for (Dim s = lo; s < hi; ++s) {
      const std::size_t idx = order[std::size_t(s)];
      const TrainSample<T>& sample = samples_[idx];
      Rng arng(derive_seed({cfg_.seed, seed_tag("aug"), std::uint64_t(epoch), std::uint64_t(idx)}));
      Tensor<T> ir, vis;
      augment_pair(sample.ir, sample.vis, aug_, arng, ir, vis);

      const auto& out = net_->forward(ir, vis);
      Tensor<T> gf;
      std::vector<Tensor<T>> gstacks;
      const LossBreakdown lb = total_loss(out.fused, ir, vis, out.stacks, cfg_.weights,
                                          cfg_.loss_mode, sets, cfg_.decomposition,
                                          nullptr, &gf, &gstacks);
      if (!std::isfinite(lb.total))
        throw RuntimeError("non-finite loss at step " + std::to_string(step) + " on sample '" +
                           sample.id + "': decomposition=" + std::to_string(lb.decomposition) +
                           " intensity=" + std::to_string(lb.intensity) +
                           " gradient=" + std::to_string(lb.gradient));

      // The batch objective is the mean of per-sample losses; scaling each
      // sample's upstream gradient by 1/B lets the parameter grads accumulate.
      for (Dim i = 0; i < gf.numel(); ++i) gf[i] = T(double(gf[i]) * invb);
      for (auto& g : gstacks)
        for (Dim i = 0; i < g.numel(); ++i) g[i] = T(double(g[i]) * invb);
      net_->backward(gf, gstacks);

      log.total += lb.total * invb;
      log.decomposition += lb.decomposition * invb;
      log.intensity += lb.intensity * invb;
      log.gradient += lb.gradient * invb;
    }

    log.step = step;
    log.epoch = epoch;
    log.lr = lr_for(step);
    log.grad_norm = clip_grad_norm(net_->params(), cfg_.clip_max_norm);
    opt_.step(net_->params(), log.lr);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
  }

  FusionNet<T>* net_;
  TrainConfig cfg_;
  AugmentationPolicy aug_;
  std::vector<TrainSample<T>> samples_;
  AdamW<T> opt_;
  Dim next_epoch_ = 0;
};

}  // namespace contifuse
