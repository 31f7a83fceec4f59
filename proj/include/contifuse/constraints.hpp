#pragma once

#include <cstdint>
#include <vector>

#include "contifuse/common.hpp"
#include "contifuse/rng.hpp"

namespace contifuse {

/// Ordered state-index pair with u > v; indexes a (K+2)-state stack.
struct ConstraintPair {
  Dim u = 0;
  Dim v = 0;
  friend bool operator==(const ConstraintPair&, const ConstraintPair&) = default;
};

/// All constrained pairs of the full loss: the strict lower triangle of a
/// (K+2)^2 matrix minus the (K+1, 0) endpoint corner.  Size (K^2 + 3K) / 2;
/// the loss doubles each term to account for the symmetric upper triangle.
inline std::vector<ConstraintPair> full_constraints(Dim K) {
  require(K >= 1, "full_constraints: K must be >= 1");
  std::vector<ConstraintPair> out;
  out.reserve(std::size_t((K * K + 3 * K) / 2));
  for (Dim u = 1; u <= K + 1; ++u)
    for (Dim v = 0; v < u; ++v) {
      if (u == K + 1 && v == 0) continue;
      out.push_back({u, v});
    }
  return out;
}

/// Non-adjacent pairs eligible for random sampling: u > v + 1, u != K+1,
/// v != 0.  Enumerated in a fixed lexicographic order so sampling is
/// reproducible.  Size (K-1)(K-2)/2 for K >= 2, empty below that.
inline std::vector<ConstraintPair> eligible_random_pairs(Dim K) {
  std::vector<ConstraintPair> out;
  for (Dim u = 3; u <= K; ++u)
    for (Dim v = 1; v <= u - 2; ++v) out.push_back({u, v});
  return out;
}

/// Support sample for one loss evaluation: every adjacent pair (i+1, i) for
/// i in 0..K, plus min(K+1, pool size) unique random non-adjacent pairs drawn
/// uniformly without replacement.  Deterministic given the seed; size 2K+2
/// whenever the eligible pool has at least K+1 members.
inline std::vector<ConstraintPair> sds_sample(std::uint64_t seed, Dim K) {
  require(K >= 1, "sds_sample: K must be >= 1");
  std::vector<ConstraintPair> out;
  out.reserve(std::size_t(2 * K + 2));
  for (Dim i = 0; i <= K; ++i) out.push_back({i + 1, i});
  auto pool = eligible_random_pairs(K);
  const std::size_t want = std::min(pool.size(), std::size_t(K + 1));
  Rng rng(seed);
  // Partial Fisher-Yates: position i receives a uniform pick from [i, end).
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + std::size_t(rng.below(std::uint64_t(pool.size() - i)));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

/// Per-layer sampling seed for training step `step`, layer `layer` of a run
/// seeded with `run_seed`.  Fresh constraints each step and layer, yet the
/// whole stream replays exactly from (seed, step, layer).
inline std::uint64_t sds_seed(std::uint64_t run_seed, std::uint64_t step, std::uint64_t layer) {
  return derive_seed({run_seed, seed_tag("sds"), step, layer});
}

}  // namespace contifuse
