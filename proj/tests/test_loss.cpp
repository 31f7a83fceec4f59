#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "contifuse/constraints.hpp"
#include "contifuse/correlation.hpp"
#include "contifuse/decay.hpp"
#include "contifuse/decomposition_loss.hpp"
#include "contifuse/distance_matrix.hpp"
#include "contifuse/pixel_loss.hpp"
#include "contifuse/total_loss.hpp"
#include "testutil.hpp"

using namespace contifuse;
using testutil::random_tensor;

namespace {

/// Textbook Pearson correlation without stabilizers; oracle for the
/// stabilized implementation on well-conditioned inputs.
double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

std::vector<Tensor<double>> random_stacks(Dim N, Dim K, Dim C, Dim H, Dim W, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<double>> stacks;
  for (Dim l = 0; l < N; ++l) stacks.push_back(random_tensor({K + 2, C, H, W}, rng));
  return stacks;
}

/// Brute-force reference for the full loss: builds both matrices outright and
/// sums the masked squared difference over both triangles.
double full_loss_oracle(const std::vector<Tensor<double>>& stacks, DecayKind kind,
                        SpanConvention conv) {
  const Dim N = Dim(stacks.size());
  double total = 0;
  for (const auto& stack : stacks) {
    const Dim S = stack.dim(0), K = S - 2;
    auto mc = build_distance_matrix(stack);
    const double mu = clamp_mu(mc(K + 1, 0));
    auto mt = build_target_matrix(K, mu, kind, conv);
    double layer = 0;
    for (Dim i = 0; i < S; ++i)
      for (Dim j = 0; j < S; ++j) {
        if (i == j) continue;
        if ((i == K + 1 && j == 0) || (i == 0 && j == K + 1)) continue;
        const double e = mc(i, j) - mt(i, j);
        layer += e * e;
      }
    total += layer / double(K * K + 3 * K);
  }
  return total / double(N);
}

}  // namespace

TEST_CASE("decay endpoints and shapes", "[loss]") {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const double mu = rng.uniform(1e-3, 0.9);
    const double s = double(2 + Dim(rng.below(30)));
    for (auto kind : {DecayKind::gaussian, DecayKind::linear}) {
      REQUIRE_THAT(apply_decay(kind, 0.0, mu, s), Catch::Matchers::WithinAbs(1.0, 1e-12));
      REQUIRE_THAT(apply_decay(kind, s - 1.0, mu, s), Catch::Matchers::WithinAbs(mu, 1e-12));
    }
    // Strictly decreasing over integer separations.
    double prev = 2.0;
    for (Dim p = 0; p <= Dim(s) - 1; ++p) {
      const double v = gaussian_decay(double(p), mu, s);
      REQUIRE(v < prev);
      prev = v;
    }
  }

  // Direct scalar evaluation: sigma = 49 / (2 ln 5) for mu=0.2, s=8.
  const double sigma = 49.0 / (2.0 * std::log(5.0));
  REQUIRE_THAT(gaussian_decay(4, 0.2, 8),
               Catch::Matchers::WithinAbs(std::exp(-16.0 / (2.0 * sigma)), 1e-12));

  // Linear midpoint for odd s-1.
  REQUIRE_THAT(linear_decay(3, 0.4, 7), Catch::Matchers::WithinAbs(0.7, 1e-12));

  REQUIRE_THROWS_AS(gaussian_decay(1, 0.0, 5), ContractError);
  REQUIRE_THROWS_AS(gaussian_decay(1, 1.0, 5), ContractError);
}

TEST_CASE("pearson_channel against covariance oracle", "[loss]") {
  Rng rng(15);
  std::vector<double> a(64), b(64);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const double got = pearson_channel(a.data(), b.data(), 64);
  REQUIRE_THAT(got, Catch::Matchers::WithinAbs(pearson_oracle(a, b), 1e-6));

  // Self, anti, affine.
  REQUIRE_THAT(pearson_channel(a.data(), a.data(), 64), Catch::Matchers::WithinAbs(1.0, 1e-7));
  std::vector<double> neg(64), aff(64);
  for (int i = 0; i < 64; ++i) {
    neg[i] = -a[i];
    aff[i] = 2.5 * a[i] + 7.0;
  }
  REQUIRE_THAT(pearson_channel(a.data(), neg.data(), 64),
               Catch::Matchers::WithinAbs(-1.0, 1e-7));
  REQUIRE_THAT(pearson_channel(a.data(), aff.data(), 64), Catch::Matchers::WithinAbs(1.0, 1e-7));

  // Constant map correlates to 0 by the stabilizer convention.
  std::vector<double> c(64, 3.0);
  REQUIRE(pearson_channel(a.data(), c.data(), 64) == 0.0);
  REQUIRE(pearson_channel(c.data(), c.data(), 64) == 0.0);
}

TEST_CASE("gamma_distance averages channels and is symmetric", "[loss]") {
  Rng rng(25);
  const Dim C = 2, P = 36;
  Tensor<double> x({C, 6, 6}), y({C, 6, 6});
  for (Dim i = 0; i < x.numel(); ++i) x[i] = rng.normal();
  // Channel 0 correlated, channel 1 anti-correlated.
  for (Dim p = 0; p < P; ++p) {
    y[p] = 2.0 * x[p] + 1.0;
    y[P + p] = -x[P + p];
  }
  const double g = gamma_distance(x.data(), y.data(), C, P);
  const double r0 = pearson_channel(x.data(), y.data(), P);
  const double r1 = pearson_channel(x.data() + P, y.data() + P, P);
  REQUIRE_THAT(g, Catch::Matchers::WithinAbs(0.5 * (r0 + r1), 1e-12));
  REQUIRE_THAT(g, Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE(gamma_distance(x.data(), y.data(), C, P) == gamma_distance(y.data(), x.data(), C, P));
}

TEST_CASE("gamma gradient matches finite differences", "[loss]") {
  Rng rng(35);
  const Dim C = 2, H = 4, W = 4, P = H * W;
  auto x = random_tensor({C, H, W}, rng);
  auto y = random_tensor({C, H, W}, rng);
  const double up = 1.7;  // arbitrary upstream gradient
  Tensor<double> gx({C, H, W}), gy({C, H, W});
  gamma_distance_backward(x.data(), y.data(), C, P, up, gx.data(), gy.data());
  auto loss = [&] { return up * gamma_distance(x.data(), y.data(), C, P); };
  testutil::expect_grad_matches(loss, x.data(), x.numel(), gx.data(), 1e-5);
  testutil::expect_grad_matches(loss, y.data(), y.numel(), gy.data(), 1e-5);
}

TEST_CASE("distance matrix matches brute-force pairs", "[loss]") {
  Rng rng(45);
  auto stack = random_tensor({4, 3, 5, 5}, rng);
  EvalCounter counter;
  auto m = build_distance_matrix(stack, &counter);
  const Dim C = 3, P = 25;
  for (Dim i = 0; i < 4; ++i)
    for (Dim j = 0; j < 4; ++j) {
      const double want =
          gamma_distance(stack.data() + i * C * P, stack.data() + j * C * P, C, P);
      REQUIRE(m(i, j) == want);
      REQUIRE(m(i, j) == m(j, i));
    }
  for (Dim i = 0; i < 4; ++i) REQUIRE_THAT(m(i, i), Catch::Matchers::WithinAbs(1.0, 1e-6));
  REQUIRE(counter.pair_evals == 10);  // lower triangle incl. diagonal
}

TEST_CASE("target matrix honors decay and span conventions", "[loss]") {
  const Dim K = 4;
  const double mu = 0.1;
  auto mt = build_target_matrix(K, mu, DecayKind::gaussian, SpanConvention::corner);
  REQUIRE(mt.dim(0) == K + 2);
  for (Dim i = 0; i < K + 2; ++i) REQUIRE(mt(i, i) == 1.0);
  // Corner convention: distance K+1 hits mu exactly.
  REQUIRE_THAT(mt(K + 1, 0), Catch::Matchers::WithinAbs(mu, 1e-12));
  for (Dim i = 0; i < K + 2; ++i)
    for (Dim j = 0; j < K + 2; ++j) {
      const double expect = gaussian_decay(double(std::llabs(i - j)), mu, double(K + 2));
      REQUIRE_THAT(mt(i, j), Catch::Matchers::WithinAbs(expect, 1e-12));
    }

  // Literal convention uses span K+1, so the corner undershoots mu.
  auto lit = build_target_matrix(K, mu, DecayKind::gaussian, SpanConvention::literal);
  REQUIRE_THAT(lit(K, 0), Catch::Matchers::WithinAbs(mu, 1e-12));
  REQUIRE(lit(K + 1, 0) < mu);
}

TEST_CASE("constraint enumeration and sampling", "[loss]") {
  for (Dim K : {Dim(3), Dim(5), Dim(7), Dim(9), Dim(11), Dim(15)}) {
    auto full = full_constraints(K);
    REQUIRE(Dim(full.size()) == (K * K + 3 * K) / 2);
    for (const auto& p : full) {
      REQUIRE(p.u > p.v);
      REQUIRE_FALSE((p.u == K + 1 && p.v == 0));
    }

    auto pool = eligible_random_pairs(K);
    REQUIRE(Dim(pool.size()) == (K - 1) * (K - 2) / 2);

    auto set = sds_sample(999 + std::uint64_t(K), K);
    const Dim expect = K == 3 ? 5 : 2 * K + 2;
    REQUIRE(Dim(set.size()) == expect);

    // All adjacent pairs lead the set.
    for (Dim i = 0; i <= K; ++i) {
      REQUIRE(set[std::size_t(i)].u == i + 1);
      REQUIRE(set[std::size_t(i)].v == i);
    }
    // Random tail: unique, non-adjacent, endpoints excluded.
    std::set<std::pair<Dim, Dim>> seen;
    for (std::size_t i = std::size_t(K) + 2; i < set.size(); ++i) {
      const auto& p = set[i];
      REQUIRE(p.u > p.v + 1);
      REQUIRE(p.u != K + 1);
      REQUIRE(p.v != 0);
      REQUIRE(seen.insert({p.u, p.v}).second);
    }

    // Deterministic per seed, varying across seeds (pool permitting).
    REQUIRE(sds_sample(42, K) == sds_sample(42, K));
    if (K >= 7) {
      bool differs = false;
      for (std::uint64_t s = 0; s < 8 && !differs; ++s)
        differs = !(sds_sample(s, K) == sds_sample(s + 100, K));
      REQUIRE(differs);
    }
  }
}

TEST_CASE("full decomposition loss matches brute-force oracle", "[loss]") {
  auto stacks = random_stacks(2, 3, 2, 6, 6, 1234);
  for (auto kind : {DecayKind::gaussian, DecayKind::linear}) {
    DecompositionSettings s{kind, SpanConvention::corner};
    const double got = decomposition_loss_full(stacks, s);
    const double want = full_loss_oracle(stacks, kind, SpanConvention::corner);
    REQUIRE_THAT(got, Catch::Matchers::WithinRel(want, 1e-10));
  }
}

TEST_CASE("sds loss with the full set equals the full loss", "[loss]") {
  auto stacks = random_stacks(2, 4, 2, 5, 5, 77);
  DecompositionSettings s;
  std::vector<std::vector<ConstraintPair>> sets;
  for (const auto& st : stacks) sets.push_back(full_constraints(st.dim(0) - 2));
  const double full = decomposition_loss_full(stacks, s);
  const double sds = decomposition_loss_sds(stacks, sets, s);
  REQUIRE_THAT(sds, Catch::Matchers::WithinRel(full, 1e-12));
}

TEST_CASE("loss evaluation counts match the cost contract", "[loss]") {
  const Dim N = 2;
  for (Dim K : {Dim(5), Dim(7), Dim(9), Dim(11), Dim(15)}) {
    auto stacks = random_stacks(N, K, 1, 4, 4, 10 + std::uint64_t(K));
    DecompositionSettings s;
    EvalCounter full_counter, sds_counter;
    decomposition_loss_full(stacks, s, &full_counter);
    REQUIRE(full_counter.pair_evals == N * (K * K + 3 * K) / 2);
    REQUIRE(full_counter.mu_evals == N);

    std::vector<std::vector<ConstraintPair>> sets;
    for (Dim l = 0; l < N; ++l) sets.push_back(sds_sample(std::uint64_t(l), K));
    decomposition_loss_sds(stacks, sets, s, &sds_counter);
    REQUIRE(sds_counter.pair_evals == N * (2 * K + 2));
    REQUIRE(sds_counter.mu_evals == N);
  }
}

TEST_CASE("sds loss gradient matches finite differences", "[loss]") {
  auto stacks = random_stacks(1, 3, 2, 4, 4, 31337);
  DecompositionSettings s;
  std::vector<std::vector<ConstraintPair>> sets{sds_sample(5, 3)};

  std::vector<Tensor<double>> grads;
  grads.emplace_back(stacks[0].dims());
  std::vector<double> mus;
  const double base = decomposition_loss_sds(stacks, sets, s, nullptr, &grads, &mus);
  REQUIRE(base > 0);

  // The target floor is a constant of the evaluation, so differentiation is
  // at fixed mu: freeze it for the finite-difference probes.
  const double frozen = decomposition_loss_sds(stacks, sets, s, nullptr, nullptr, nullptr, &mus);
  REQUIRE_THAT(frozen, Catch::Matchers::WithinRel(base, 1e-12));

  auto loss = [&] {
    return decomposition_loss_sds(stacks, sets, s, nullptr, nullptr, nullptr, &mus);
  };
  testutil::expect_grad_matches(loss, stacks[0].data(), stacks[0].numel(), grads[0].data(), 1e-4,
                                96);
}

TEST_CASE("intensity loss hand example and gradient", "[loss]") {
  // 2x2: F = [0.5 0.2; 1.0 0.0], I = [0.4 0.1; 0.6 0.0], V = [0.6 0.0; 0.2 0.1].
  Tensor<double> F({2, 2}), I({2, 2}), V({2, 2});
  F[0] = 0.5; F[1] = 0.2; F[2] = 1.0; F[3] = 0.0;
  I[0] = 0.4; I[1] = 0.1; I[2] = 0.6; I[3] = 0.0;
  V[0] = 0.6; V[1] = 0.0; V[2] = 0.2; V[3] = 0.1;
  // max(I,V) = [0.6 0.1; 0.6 0.1]; residuals [-0.1, 0.1, 0.4, -0.1].
  const double want = (0.01 + 0.01 + 0.16 + 0.01) / 4.0;
  REQUIRE_THAT(intensity_loss(F.data(), I.data(), V.data(), 2, 2),
               Catch::Matchers::WithinAbs(want, 1e-12));

  REQUIRE(intensity_loss(I.data(), I.data(), I.data(), 2, 2) == 0.0);

  Tensor<double> gf({2, 2});
  intensity_loss(F.data(), I.data(), V.data(), 2, 2, 1.0, gf.data());
  auto loss = [&] { return intensity_loss(F.data(), I.data(), V.data(), 2, 2); };
  testutil::expect_grad_matches(loss, F.data(), 4, gf.data(), 1e-6);
}

TEST_CASE("sobel responses on a ramp and gradient-loss properties", "[loss]") {
  // Horizontal ramp x(i,j) = j on 3x3.
  Tensor<double> ramp({3, 3});
  for (Dim i = 0; i < 3; ++i)
    for (Dim j = 0; j < 3; ++j) ramp(i, j) = double(j);
  Tensor<double> gx({3, 3}), gy({3, 3});
  sobel_forward(ramp.data(), gx.data(), gy.data(), 3, 3);
  // Center column: taps 0,1,2 with weights summing to 8; mirrored edges cancel.
  REQUIRE_THAT(gx(1, 1), Catch::Matchers::WithinAbs(8.0, 1e-12));
  REQUIRE_THAT(gx(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));
  for (Dim i = 0; i < 9; ++i) REQUIRE_THAT(gy[i], Catch::Matchers::WithinAbs(0.0, 1e-12));

  // Constant images: zero loss.
  Tensor<double> c = Tensor<double>::full({4, 4}, 0.3);
  REQUIRE(gradient_loss(c.data(), c.data(), c.data(), 4, 4) == 0.0);

  // F = I = V: zero loss even when textured.
  Rng rng(55);
  auto x = random_tensor({5, 5}, rng);
  REQUIRE(gradient_loss(x.data(), x.data(), x.data(), 5, 5) == 0.0);

  // Gradient of the loss w.r.t. F via finite differences.
  auto F = random_tensor({5, 5}, rng);
  auto I = random_tensor({5, 5}, rng);
  auto V = random_tensor({5, 5}, rng);
  Tensor<double> gf({5, 5});
  gradient_loss(F.data(), I.data(), V.data(), 5, 5, 1.0, gf.data());
  auto loss = [&] { return gradient_loss(F.data(), I.data(), V.data(), 5, 5); };
  testutil::expect_grad_matches(loss, F.data(), 25, gf.data(), 1e-4);
}

TEST_CASE("total loss composition and weights", "[loss]") {
  Rng rng(65);
  auto F = random_tensor({6, 6}, rng);
  auto I = random_tensor({6, 6}, rng);
  auto V = random_tensor({6, 6}, rng);
  auto stacks = random_stacks(1, 3, 2, 3, 3, 11);
  std::vector<std::vector<ConstraintPair>> sets{sds_sample(3, 3)};
  DecompositionSettings ds;

  LossWeights zero{0.0, 0.0};
  auto b0 = total_loss(F, I, V, stacks, zero, LossMode::sds, sets, ds);
  REQUIRE_THAT(b0.total, Catch::Matchers::WithinRel(b0.decomposition, 1e-12));
  REQUIRE_THAT(b0.total, Catch::Matchers::WithinRel(decomposition_loss_sds(stacks, sets, ds), 1e-12));

  LossWeights dflt;
  REQUIRE(dflt.alpha_intensity == 15.0);
  REQUIRE(dflt.alpha_gradient == 15.0);
  auto b = total_loss(F, I, V, stacks, dflt, LossMode::full, sets, ds);
  REQUIRE_THAT(b.total, Catch::Matchers::WithinRel(
                            b.decomposition + 15.0 * b.intensity + 15.0 * b.gradient, 1e-12));
  REQUIRE(b.mu.size() == 1);

  // Gradient of the combined objective w.r.t. the fused image.
  Tensor<double> gf(F.dims());
  total_loss(F, I, V, stacks, dflt, LossMode::sds, sets, ds, nullptr, &gf);
  auto loss = [&] {
    return total_loss(F, I, V, stacks, dflt, LossMode::sds, sets, ds).total;
  };
  testutil::expect_grad_matches(loss, F.data(), F.numel(), gf.data(), 1e-4, 36);
}
