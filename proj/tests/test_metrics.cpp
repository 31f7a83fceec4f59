#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>

#include "contifuse/metrics.hpp"
#include "testutil.hpp"

namespace {

namespace fs = std::filesystem;
using namespace contifuse;

constexpr double kPi = 3.14159265358979323846;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("contifuse_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Random image of integer gray levels on the metric scale.
Tensor<double> random_levels(Dim H, Dim W, std::uint64_t seed) {
  Tensor<double> t({H, W});
  Rng rng(seed);
  for (Dim i = 0; i < t.numel(); ++i) t[i] = double(rng.below(256));
  return t;
}

Tensor<double> constant_image(Dim H, Dim W, double v) {
  Tensor<double> t({H, W});
  for (Dim i = 0; i < t.numel(); ++i) t[i] = v;
  return t;
}

/// Histogram entropy in nats, the independent oracle for MI(X,X).
double entropy_nats(const Tensor<double>& x) {
  std::vector<double> h(256, 0.0);
  for (Dim i = 0; i < x.numel(); ++i) h[std::size_t(std::lround(x[i]))] += 1.0;
  double e = 0;
  const double n = double(x.numel());
  for (double c : h)
    if (c > 0) e -= (c / n) * std::log(c / n);
  return e;
}

TEST_CASE("mutual information matches histogram oracles", "[metrics]") {
  // hand-filled joint table: F has a 12/4 split, I a 4/12 split, overlapping
  // on one column; p(0,0)=1/4, p(0,255)=1/2, p(255,255)=1/4
  Tensor<double> F({4, 4}), I({4, 4});
  for (Dim i = 0; i < 4; ++i)
    for (Dim j = 0; j < 4; ++j) {
      F(i, j) = j == 3 ? 255.0 : 0.0;
      I(i, j) = j == 0 ? 0.0 : 255.0;
    }
  const double expect = 0.25 * std::log((0.25) / (0.75 * 0.25)) +
                        0.50 * std::log((0.50) / (0.75 * 0.75)) +
                        0.25 * std::log((0.25) / (0.25 * 0.75));
  CHECK(mutual_information(F, I) == Catch::Approx(expect).margin(1e-12));

  // identical images: MI is the histogram entropy
  const auto X = random_levels(16, 16, 11);
  CHECK(mutual_information(X, X) == Catch::Approx(entropy_nats(X)).margin(1e-9));
  CHECK(mi(X, X, X) == Catch::Approx(2.0 * entropy_nats(X)).margin(1e-9));

  // a constant carries no information about anything
  const auto C = constant_image(16, 16, 40.0);
  CHECK(mutual_information(X, C) == Catch::Approx(0.0).margin(1e-12));
  CHECK(mutual_information(C, C) == Catch::Approx(0.0).margin(1e-12));

  // symmetric in its arguments
  const auto Y = random_levels(16, 16, 12);
  CHECK(mutual_information(X, Y) == Catch::Approx(mutual_information(Y, X)).margin(1e-12));
  CHECK(mutual_information(X, Y) >= 0.0);

  CHECK_THROWS_AS(mutual_information(X, random_levels(8, 8, 1)), ContractError);
}

TEST_CASE("spatial frequency follows first-difference arithmetic", "[metrics]") {
  CHECK(sf(constant_image(7, 9, 123.0)) == 0.0);
  CHECK(sf(constant_image(1, 1, 5.0)) == 0.0);

  // 0/255 checkerboard: every existing difference is exactly 255
  Tensor<double> cb({4, 4});
  for (Dim i = 0; i < 4; ++i)
    for (Dim j = 0; j < 4; ++j) cb(i, j) = ((i + j) % 2) ? 255.0 : 0.0;
  CHECK(sf(cb) == Catch::Approx(255.0 * std::sqrt(2.0)).margin(1e-9));

  // translation leaves integer-valued differences untouched
  const auto X = random_levels(8, 8, 21);
  Tensor<double> shifted = X;
  for (Dim i = 0; i < X.numel(); ++i) shifted[i] += 10.0;
  CHECK(sf(shifted) == sf(X));

  // contrast scaling >= 1 scales the value
  Tensor<double> doubled = X;
  for (Dim i = 0; i < X.numel(); ++i) doubled[i] *= 2.0;
  CHECK(sf(doubled) == Catch::Approx(2.0 * sf(X)).margin(1e-9));
  CHECK(sf(doubled) > sf(X));

  // direct transcription on a random image
  double rf2 = 0, cf2 = 0;
  for (Dim i = 0; i < 8; ++i)
    for (Dim j = 1; j < 8; ++j) rf2 += (X(i, j) - X(i, j - 1)) * (X(i, j) - X(i, j - 1));
  for (Dim i = 1; i < 8; ++i)
    for (Dim j = 0; j < 8; ++j) cf2 += (X(i, j) - X(i - 1, j)) * (X(i, j) - X(i - 1, j));
  CHECK(sf(X) == Catch::Approx(std::sqrt(rf2 / 56.0 + cf2 / 56.0)).margin(1e-12));
}

TEST_CASE("average gradient follows forward differences", "[metrics]") {
  CHECK(ag(constant_image(6, 6, 9.0)) == 0.0);
  CHECK(ag(constant_image(1, 8, 3.0)) == 0.0);

  // horizontal unit ramp: dx = 1, dy = 0 everywhere
  Tensor<double> ramp({6, 8});
  for (Dim i = 0; i < 6; ++i)
    for (Dim j = 0; j < 8; ++j) ramp(i, j) = double(j);
  CHECK(ag(ramp) == Catch::Approx(std::sqrt(0.5)).margin(1e-12));

  // random image against a direct double loop
  const auto X = random_levels(8, 8, 31);
  double sum = 0;
  for (Dim i = 0; i < 7; ++i)
    for (Dim j = 0; j < 7; ++j) {
      const double dx = X(i, j + 1) - X(i, j);
      const double dy = X(i + 1, j) - X(i, j);
      sum += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  CHECK(ag(X) == Catch::Approx(sum / 49.0).margin(1e-12));

  // translation invariance on integer levels
  Tensor<double> shifted = X;
  for (Dim i = 0; i < X.numel(); ++i) shifted[i] += 17.0;
  CHECK(ag(shifted) == ag(X));
}

/// Straight-line transcription of the edge-preservation model, kept naive on
/// purpose: 3x3 Sobel by explicit loops, ratio/orientation sigmoids inline.
double qabf_reference(const Tensor<double>& F, const Tensor<double>& A, const Tensor<double>& B) {
  const Dim H = F.dim(0), W = F.dim(1);
  auto sob = [&](const Tensor<double>& x, Dim i, Dim j, double& sx, double& sy) {
    const double wx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    const double wy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    sx = sy = 0;
    for (Dim u = 0; u < 3; ++u)
      for (Dim v = 0; v < 3; ++v) {
        const double p = x(fold_index(i + u - 1, H), fold_index(j + v - 1, W));
        sx += wx[u][v] * p;
        sy += wy[u][v] * p;
      }
  };
  auto q = [](double gs, double as, double gf, double af) {
    double G;
    if (gs > gf)
      G = gf / gs;
    else if (gf > gs)
      G = gs / gf;
    else
      G = gs == 0 ? 0.0 : 1.0;
    const double Aor = 1.0 - std::fabs(as - af) / (kPi / 2.0);
    return (0.9994 / (1.0 + std::exp(-15.0 * (G - 0.5)))) *
           (0.9879 / (1.0 + std::exp(-22.0 * (Aor - 0.8))));
  };
  auto ang = [](double sx, double sy) { return sx == 0 ? kPi / 2.0 : std::atan(sy / sx); };
  double num = 0, den = 0;
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      double axv, ayv, bxv, byv, fxv, fyv;
      sob(A, i, j, axv, ayv);
      sob(B, i, j, bxv, byv);
      sob(F, i, j, fxv, fyv);
      const double ga = std::hypot(axv, ayv), gb = std::hypot(bxv, byv),
                   gf = std::hypot(fxv, fyv);
      num += q(ga, ang(axv, ayv), gf, ang(fxv, fyv)) * ga +
             q(gb, ang(bxv, byv), gf, ang(fxv, fyv)) * gb;
      den += ga + gb;
    }
  return den == 0 ? 0.0 : num / den;
}

TEST_CASE("edge preservation behaves like the published model", "[metrics]") {
  // perfect preservation: every contributing pixel sits at the sigmoid peak
  const auto X = random_levels(16, 16, 41);
  const double bound = (0.9994 / (1.0 + std::exp(-15.0 * 0.5))) *
                       (0.9879 / (1.0 + std::exp(-22.0 * 0.2)));
  const double self = qabf(X, X, X);
  CHECK(self == Catch::Approx(bound).margin(1e-12));
  CHECK(self >= 0.99 * bound);

  // all-flat sources define the score as zero
  CHECK(qabf(constant_image(8, 8, 1.0), constant_image(8, 8, 2.0), constant_image(8, 8, 3.0)) ==
        0.0);

  // a flat fused image preserves essentially nothing
  CHECK(qabf(constant_image(16, 16, 128.0), X, random_levels(16, 16, 42)) < 1e-3);

  // bounded on arbitrary inputs
  const double v = qabf(random_levels(12, 12, 43), random_levels(12, 12, 44),
                        random_levels(12, 12, 45));
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);

  // matches the straight-line transcription
  const auto F8 = random_levels(8, 8, 46), A8 = random_levels(8, 8, 47),
             B8 = random_levels(8, 8, 48);
  CHECK(qabf(F8, A8, B8) == Catch::Approx(qabf_reference(F8, A8, B8)).margin(1e-12));
}

/// Straight-line transcription of the fidelity ratio for one source: direct
/// 2D window sums (no separability), same stabilization and scale recursion.
double vif_source_reference(Tensor<double> f, Tensor<double> x) {
  constexpr double eps = 1e-10, sn2 = 2.0;
  auto filt = [](const Tensor<double>& img, Dim n, double sd) {
    const Dim H = img.dim(0), W = img.dim(1), r = n / 2;
    std::vector<double> k(static_cast<std::size_t>(n));
    double sum = 0;
    for (Dim u = 0; u < n; ++u) {
      const double d = double(u - r);
      k[std::size_t(u)] = std::exp(-d * d / (2.0 * sd * sd));
      sum += k[std::size_t(u)];
    }
    for (double& v : k) v /= sum;
    Tensor<double> out({H, W});
    for (Dim i = 0; i < H; ++i)
      for (Dim j = 0; j < W; ++j) {
        double s = 0;
        for (Dim u = 0; u < n; ++u)
          for (Dim v = 0; v < n; ++v)
            s += k[std::size_t(u)] * k[std::size_t(v)] *
                 img(fold_index(i + u - r, H), fold_index(j + v - r, W));
        out(i, j) = s;
      }
    return out;
  };
  auto deci = [](const Tensor<double>& img) {
    Tensor<double> out({(img.dim(0) + 1) / 2, (img.dim(1) + 1) / 2});
    for (Dim i = 0; i < out.dim(0); ++i)
      for (Dim j = 0; j < out.dim(1); ++j) out(i, j) = img(2 * i, 2 * j);
    return out;
  };
  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const Dim n = (Dim(1) << (5 - scale)) + 1;
    const double sd = double(n) / 5.0;
    if (scale > 1) {
      f = deci(filt(f, n, sd));
      x = deci(filt(x, n, sd));
    }
    Tensor<double> xx = x, ff = f, xf = x;
    for (Dim i = 0; i < x.numel(); ++i) {
      xx[i] = x[i] * x[i];
      ff[i] = f[i] * f[i];
      xf[i] = x[i] * f[i];
    }
    const auto mx = filt(x, n, sd), mf = filt(f, n, sd);
    const auto exx = filt(xx, n, sd), eff = filt(ff, n, sd), exf = filt(xf, n, sd);
    for (Dim i = 0; i < x.numel(); ++i) {
      double sigx = std::max(0.0, exx[i] - mx[i] * mx[i]);
      double sigf = std::max(0.0, eff[i] - mf[i] * mf[i]);
      const double sigxf = exf[i] - mx[i] * mf[i];
      double g = sigxf / (sigx + eps);
      double sv = sigf - g * sigxf;
      if (sigx < eps) {
        g = 0;
        sv = sigf;
        sigx = 0;
      }
      if (sigf < eps) {
        g = 0;
        sv = 0;
      }
      if (g < 0) {
        sv = sigf;
        g = 0;
      }
      if (sv < eps) sv = eps;
      num += std::log(1.0 + g * g * sigx / (sv + sn2));
      den += std::log(1.0 + sigx / sn2);
    }
  }
  return den == 0 ? 1.0 : num / den;
}

TEST_CASE("visual information fidelity tracks its reference formula", "[metrics]") {
  // fused equal to both sources: numerator equals denominator
  const auto X = random_levels(32, 32, 51);
  CHECK(vif(X, X, X) == Catch::Approx(1.0).margin(1e-6));

  // a flat fused image transfers nothing from textured sources
  CHECK(vif(constant_image(16, 16, 100.0), random_levels(16, 16, 52),
            random_levels(16, 16, 53)) == Catch::Approx(0.0).margin(1e-12));

  // tiny case against the non-separable transcription
  const auto F = random_levels(16, 16, 54), I = random_levels(16, 16, 55),
             V = random_levels(16, 16, 56);
  const double expect = 0.5 * (vif_source_reference(F, I) + vif_source_reference(F, V));
  CHECK(vif(F, I, V) == Catch::Approx(expect).margin(1e-9));
  CHECK(std::isfinite(vif(F, I, V)));
}

TEST_CASE("directory evaluation aggregates and skips", "[metrics]") {
  TempDir td("metrics");
  fs::create_directories(td.path / "fused");
  fs::create_directories(td.path / "ir");
  fs::create_directories(td.path / "vi");

  auto put = [&](const std::string& dir, const std::string& name, std::uint64_t seed) {
    ImageU8 img;
    img.height = 16;
    img.width = 16;
    img.channels = 1;
    img.pixels.resize(256);
    Rng rng(seed);
    for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
    save_png((td.path / dir / name).string(), img);
  };
  put("fused", "a.png", 1);
  put("ir", "a.png", 2);
  put("vi", "a.png", 3);
  put("fused", "b.png", 4);
  put("ir", "b.png", 5);
  put("vi", "b.png", 6);

  const MetricReport report =
      evaluate_directory((td.path / "fused").string(), (td.path / "ir").string(),
                         (td.path / "vi").string());
  REQUIRE(report.rows.size() == 2);
  CHECK(report.complete());
  CHECK(report.rows[0].id == "a.png");
  CHECK(report.rows[1].id == "b.png");
  const MetricRow m = report.mean();
  CHECK(m.mi == Catch::Approx(0.5 * (report.rows[0].mi + report.rows[1].mi)).margin(1e-12));
  CHECK(m.qabf == Catch::Approx(0.5 * (report.rows[0].qabf + report.rows[1].qabf)).margin(1e-12));

  const std::string csv = metric_report_csv(report);
  CHECK(csv.find("image_id,MI,SF,AG,VIF,Qabf,LIQE,TOPIQ") != std::string::npos);
  CHECK(csv.find("a.png,") != std::string::npos);
  CHECK(csv.find("mean,") != std::string::npos);
  CHECK(csv.find("VIF: pixel-domain") != std::string::npos);
  const std::string table = metric_report_table(report);
  CHECK(table.find("a.png") != std::string::npos);
  CHECK(table.find("mean") != std::string::npos);

  // single pair: the mean is the value
  fs::remove(td.path / "fused" / "b.png");
  const MetricReport one =
      evaluate_directory((td.path / "fused").string(), (td.path / "ir").string(),
                         (td.path / "vi").string());
  REQUIRE(one.rows.size() == 1);
  CHECK(one.mean().mi == one.rows[0].mi);

  // missing counterpart: reported, not fatal
  put("fused", "c.png", 7);
  const MetricReport partial =
      evaluate_directory((td.path / "fused").string(), (td.path / "ir").string(),
                         (td.path / "vi").string());
  CHECK(partial.rows.size() == 1);
  REQUIRE(partial.skipped.size() == 1);
  CHECK_FALSE(partial.complete());
  CHECK(partial.skipped[0].find("c.png") != std::string::npos);
  CHECK(metric_report_table(partial).find("skipped") != std::string::npos);

  // unreadable image: reported, not fatal
  {
    std::ofstream junk((td.path / "fused" / "d.png").string(), std::ios::binary);
    junk << "not an image";
    put("ir", "d.png", 8);
    put("vi", "d.png", 9);
  }
  const MetricReport broken =
      evaluate_directory((td.path / "fused").string(), (td.path / "ir").string(),
                         (td.path / "vi").string());
  CHECK(broken.skipped.size() == 2);

  // size mismatch: reported, not fatal
  {
    ImageU8 small;
    small.height = 8;
    small.width = 8;
    small.channels = 1;
    small.pixels.assign(64, 128);
    fs::remove(td.path / "fused" / "d.png");
    fs::remove(td.path / "fused" / "c.png");
    save_png((td.path / "fused" / "e.png").string(), small);
    put("ir", "e.png", 10);
    put("vi", "e.png", 11);
  }
  const MetricReport mismatched =
      evaluate_directory((td.path / "fused").string(), (td.path / "ir").string(),
                         (td.path / "vi").string());
  REQUIRE(mismatched.skipped.size() == 1);
  CHECK(mismatched.skipped[0].find("size mismatch") != std::string::npos);

  // an empty fused directory is an error, not an empty report
  TempDir empty("metrics_empty");
  fs::create_directories(empty.path / "fused");
  CHECK_THROWS_AS(evaluate_directory((empty.path / "fused").string(), (td.path / "ir").string(),
                                     (td.path / "vi").string()),
                  ContractError);
  CHECK_THROWS_AS(evaluate_directory((empty.path / "nodir").string(), (td.path / "ir").string(),
                                     (td.path / "vi").string()),
                  ContractError);
}

TEST_CASE("metric gray plane handles color and gray sources", "[metrics]") {
  ImageU8 rgb;
  rgb.height = 2;
  rgb.width = 2;
  rgb.channels = 3;
  rgb.pixels = {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255};
  const Tensor<double> y = metric_gray(rgb);
  CHECK(y(0, 0) == Catch::Approx(0.299 * 255.0).margin(1e-9));
  CHECK(y(0, 1) == Catch::Approx(0.587 * 255.0).margin(1e-9));
  CHECK(y(1, 0) == Catch::Approx(0.114 * 255.0).margin(1e-9));
  CHECK(y(1, 1) == Catch::Approx(255.0).margin(1e-9));

  ImageU8 gray;
  gray.height = 1;
  gray.width = 3;
  gray.channels = 1;
  gray.pixels = {0, 100, 200};
  const Tensor<double> g = metric_gray(gray);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 100.0);
  CHECK(g(0, 2) == 200.0);
}

}  // namespace
