#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "contifuse/color.hpp"
#include "contifuse/image_io.hpp"
#include "contifuse/pad.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// Fusion quality metrics.  All of them follow the literature's convention of
/// operating on the 0-255 intensity scale of saved 8-bit outputs, not the
/// network's [0,1] scale; magnitudes are otherwise off by orders of magnitude.

namespace detail {

constexpr double kPi = 3.14159265358979323846;

inline void require_image(const Tensor<double>& x, const char* who) {
  require(x.rank() == 2 && x.numel() >= 1, std::string(who) + ": expects a non-empty H x W image");
}

inline void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* who) {
  require(a.same_dims(b), std::string(who) + ": images must share one H x W shape");
}

/// Separable Gaussian blur with mirrored (edge-duplicating) borders; output
/// keeps the input size.
inline Tensor<double> gaussian_filter(const Tensor<double>& x, Dim n, double sd) {
  const Dim H = x.dim(0), W = x.dim(1), r = n / 2;
  std::vector<double> k(static_cast<std::size_t>(n));
  double sum = 0;
  for (Dim u = 0; u < n; ++u) {
    const double d = double(u - r);
    k[std::size_t(u)] = std::exp(-d * d / (2.0 * sd * sd));
    sum += k[std::size_t(u)];
  }
  for (double& v : k) v /= sum;

  Tensor<double> rows({H, W}), out({H, W});
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      double s = 0;
      for (Dim u = 0; u < n; ++u) s += k[std::size_t(u)] * x(i, fold_index(j + u - r, W));
      rows(i, j) = s;
    }
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      double s = 0;
      for (Dim u = 0; u < n; ++u) s += k[std::size_t(u)] * rows(fold_index(i + u - r, H), j);
      out(i, j) = s;
    }
  return out;
}

/// Keeps every other pixel, starting at the origin.
inline Tensor<double> decimate2(const Tensor<double>& x) {
  const Dim H = (x.dim(0) + 1) / 2, W = (x.dim(1) + 1) / 2;
  Tensor<double> out({H, W});
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) out(i, j) = x(2 * i, 2 * j);
  return out;
}

/// Information fidelity of the fused image toward one source: the ratio of
/// extracted to available visual information, accumulated over 4 scales of
/// Gaussian-windowed local statistics (window 2^(5-s)+1, sd = n/5, every
/// pixel a window center) with sensor noise variance sigma_n^2 = 2.  A source
/// with no information at any scale is perfectly preserved by definition.
inline double vif_source(Tensor<double> f, Tensor<double> x) {
  constexpr double eps = 1e-10, sn2 = 2.0;
  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const Dim n = (Dim(1) << (5 - scale)) + 1;
    const double sd = double(n) / 5.0;
    if (scale > 1) {
      f = decimate2(gaussian_filter(f, n, sd));
      x = decimate2(gaussian_filter(x, n, sd));
    }
    Tensor<double> xx = x, ff = f, xf = x;
    for (Dim i = 0; i < x.numel(); ++i) {
      xx[i] = x[i] * x[i];
      ff[i] = f[i] * f[i];
      xf[i] = x[i] * f[i];
    }
    const Tensor<double> mx = gaussian_filter(x, n, sd);
    const Tensor<double> mf = gaussian_filter(f, n, sd);
    const Tensor<double> exx = gaussian_filter(xx, n, sd);
    const Tensor<double> eff = gaussian_filter(ff, n, sd);
    const Tensor<double> exf = gaussian_filter(xf, n, sd);
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

/// 3x3 Sobel derivatives with mirrored borders.
inline void sobel(const Tensor<double>& x, Tensor<double>& gx, Tensor<double>& gy) {
  static const double wx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const double wy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const Dim H = x.dim(0), W = x.dim(1);
  gx = Tensor<double>({H, W});
  gy = Tensor<double>({H, W});
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      double sx = 0, sy = 0;
      for (Dim u = 0; u < 3; ++u)
        for (Dim v = 0; v < 3; ++v) {
          const double p = x(fold_index(i + u - 1, H), fold_index(j + v - 1, W));
          sx += wx[u][v] * p;
          sy += wy[u][v] * p;
        }
      gx(i, j) = sx;
      gy(i, j) = sy;
    }
}

/// Edge preservation of one source pixel in the fused image: sigmoid models
/// over relative strength and relative orientation, with the standard
/// published constants (Gamma_g=0.9994, k_g=-15, sigma_g=0.5;
/// Gamma_a=0.9879, k_a=-22, sigma_a=0.8).
inline double edge_preservation(double ga, double aa, double gf, double af) {
  double G;
  if (ga > gf)
    G = gf / ga;
  else if (gf > ga)
    G = ga / gf;
  else
    G = ga == 0 ? 0.0 : 1.0;
  const double A = 1.0 - std::fabs(aa - af) / (kPi / 2.0);
  const double qg = 0.9994 / (1.0 + std::exp(-15.0 * (G - 0.5)));
  const double qa = 0.9879 / (1.0 + std::exp(-22.0 * (A - 0.8)));
  return qg * qa;
}

inline double edge_angle(double sx, double sy) { return sx == 0 ? kPi / 2.0 : std::atan(sy / sx); }

}  // namespace detail

/// Mutual information between two images from a 256x256 joint histogram of
/// their 8-bit quantizations, in nats.
inline double mutual_information(const Tensor<double>& a, const Tensor<double>& b) {
  detail::require_image(a, "mutual_information");
  detail::require_same(a, b, "mutual_information");
  auto bin = [](double v) {
    long q = std::lround(v);
    return std::size_t(std::clamp(q, 0l, 255l));
  };
  std::vector<double> joint(256 * 256, 0.0), pa(256, 0.0), pb(256, 0.0);
  const double n = double(a.numel());
  for (Dim i = 0; i < a.numel(); ++i) joint[bin(a[i]) * 256 + bin(b[i])] += 1.0;
  for (std::size_t ia = 0; ia < 256; ++ia)
    for (std::size_t ib = 0; ib < 256; ++ib) {
      pa[ia] += joint[ia * 256 + ib];
      pb[ib] += joint[ia * 256 + ib];
    }
  double mi = 0;
  for (std::size_t ia = 0; ia < 256; ++ia)
    for (std::size_t ib = 0; ib < 256; ++ib) {
      const double c = joint[ia * 256 + ib];
      if (c > 0) mi += (c / n) * std::log(c * n / (pa[ia] * pb[ib]));
    }
  return mi;
}

/// Information the fused image retains from both sources.
inline double mi(const Tensor<double>& fused, const Tensor<double>& ir, const Tensor<double>& vis) {
  return mutual_information(fused, ir) + mutual_information(fused, vis);
}

/// Spatial frequency: root-mean-square of horizontal and vertical first
/// differences (each averaged over the differences that exist), combined as
/// sqrt(RF^2 + CF^2).
inline double sf(const Tensor<double>& x) {
  detail::require_image(x, "sf");
  const Dim H = x.dim(0), W = x.dim(1);
  double rf2 = 0, cf2 = 0;
  for (Dim i = 0; i < H; ++i)
    for (Dim j = 1; j < W; ++j) {
      const double d = x(i, j) - x(i, j - 1);
      rf2 += d * d;
    }
  for (Dim i = 1; i < H; ++i)
    for (Dim j = 0; j < W; ++j) {
      const double d = x(i, j) - x(i - 1, j);
      cf2 += d * d;
    }
  if (W > 1) rf2 /= double(H * (W - 1));
  if (H > 1) cf2 /= double((H - 1) * W);
  return std::sqrt(rf2 + cf2);
}

/// Average gradient: mean over pixels with both forward differences of
/// sqrt((dx^2 + dy^2) / 2).
inline double ag(const Tensor<double>& x) {
  detail::require_image(x, "ag");
  const Dim H = x.dim(0), W = x.dim(1);
  if (H < 2 || W < 2) return 0.0;
  double sum = 0;
  for (Dim i = 0; i + 1 < H; ++i)
    for (Dim j = 0; j + 1 < W; ++j) {
      const double dx = x(i, j + 1) - x(i, j);
      const double dy = x(i + 1, j) - x(i, j);
      sum += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return sum / double((H - 1) * (W - 1));
}

/// Visual information fidelity of the fusion: the mean of the per-source
/// fidelity ratios (pixel-domain variant; see detail::vif_source).
inline double vif(const Tensor<double>& fused, const Tensor<double>& ir,
                  const Tensor<double>& vis) {
  detail::require_image(fused, "vif");
  detail::require_same(fused, ir, "vif");
  detail::require_same(fused, vis, "vif");
  return 0.5 * (detail::vif_source(fused, ir) + detail::vif_source(fused, vis));
}

/// Edge-preservation quality: per-pixel preservation of each source's Sobel
/// edges in the fused image, weighted by source edge strength.  All-flat
/// sources carry no edges to preserve; the score is defined as 0 there.
inline double qabf(const Tensor<double>& fused, const Tensor<double>& ir,
                   const Tensor<double>& vis) {
  detail::require_image(fused, "qabf");
  detail::require_same(fused, ir, "qabf");
  detail::require_same(fused, vis, "qabf");
  Tensor<double> ax, ay, bx, by, fx, fy;
  detail::sobel(ir, ax, ay);
  detail::sobel(vis, bx, by);
  detail::sobel(fused, fx, fy);
  double num = 0, den = 0;
  for (Dim i = 0; i < fused.numel(); ++i) {
    const double ga = std::sqrt(ax[i] * ax[i] + ay[i] * ay[i]);
    const double gb = std::sqrt(bx[i] * bx[i] + by[i] * by[i]);
    const double gf = std::sqrt(fx[i] * fx[i] + fy[i] * fy[i]);
    const double aa = detail::edge_angle(ax[i], ay[i]);
    const double ab = detail::edge_angle(bx[i], by[i]);
    const double af = detail::edge_angle(fx[i], fy[i]);
    num += detail::edge_preservation(ga, aa, gf, af) * ga +
           detail::edge_preservation(gb, ab, gf, af) * gb;
    den += ga + gb;
  }
  return den == 0 ? 0.0 : num / den;
}

/// One evaluated image (or the aggregate row of a report).
struct MetricRow {
  std::string id;
  double mi = 0, sf = 0, ag = 0, vif = 0, qabf = 0;
};

/// Column selection.  Deselected metrics are neither computed nor printed;
/// the CSV schema keeps its fixed column order regardless.
struct MetricMask {
  bool mi = true, sf = true, ag = true, vif = true, qabf = true;
};

inline MetricMask parse_metric_mask(const std::string& csv) {
  MetricMask m{false, false, false, false, false};
  std::stringstream ss(csv);
  std::string item;
  bool any = false;
  while (std::getline(ss, item, ',')) {
    std::transform(item.begin(), item.end(), item.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    if (item == "mi")
      m.mi = true;
    else if (item == "sf")
      m.sf = true;
    else if (item == "ag")
      m.ag = true;
    else if (item == "vif")
      m.vif = true;
    else if (item == "qabf")
      m.qabf = true;
    else
      throw ContractError("unknown metric '" + item + "' (available: mi, sf, ag, vif, qabf)");
    any = true;
  }
  require(any, "metric selection is empty");
  return m;
}

struct MetricReport {
  MetricMask mask;                   // which columns were computed
  std::vector<MetricRow> rows;       // per image, in evaluation order
  std::vector<std::string> skipped;  // human-readable reasons

  bool complete() const { return skipped.empty(); }

  MetricRow mean() const {
    require(!rows.empty(), "metric report has no evaluated images");
    MetricRow m;
    m.id = "mean";
    for (const auto& r : rows) {
      m.mi += r.mi;
      m.sf += r.sf;
      m.ag += r.ag;
      m.vif += r.vif;
      m.qabf += r.qabf;
    }
    const double n = double(rows.size());
    m.mi /= n;
    m.sf /= n;
    m.ag /= n;
    m.vif /= n;
    m.qabf /= n;
    return m;
  }
};

/// Grayscale 0-255 plane for the metric functions.
inline Tensor<double> metric_gray(const ImageU8& img) {
  Tensor<double> y({img.height, img.width});
  for (Dim i = 0; i < img.height; ++i)
    for (Dim j = 0; j < img.width; ++j) {
      if (img.channels == 1)
        y(i, j) = double(img.at(i, j, 0));
      else
        y(i, j) = luma(double(img.at(i, j, 0)), double(img.at(i, j, 1)), double(img.at(i, j, 2)));
    }
  return y;
}

namespace detail {

inline bool looks_like_image(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

}  // namespace detail

/// Scores every fused image against its equally-named sources.  Pairs whose
/// counterpart is missing or unreadable are recorded in `skipped` rather than
/// aborting the run; callers surface that as a partial failure.
inline MetricReport evaluate_directory(const std::string& fused_dir, const std::string& ir_dir,
                                       const std::string& vis_dir, MetricMask mask = {}) {
  namespace fs = std::filesystem;
  require(fs::is_directory(fused_dir), "not a directory: " + fused_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(fused_dir))
    if (e.is_regular_file() && detail::looks_like_image(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no fused images found in " + fused_dir);

  MetricReport report;
  report.mask = mask;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const fs::path ip = fs::path(ir_dir) / name;
    const fs::path vp = fs::path(vis_dir) / name;
    if (!fs::exists(ip) || !fs::exists(vp)) {
      report.skipped.push_back(name + ": missing source counterpart");
      continue;
    }
    try {
      const Tensor<double> F = metric_gray(load_image(f.string()));
      const Tensor<double> I = metric_gray(load_image(ip.string()));
      const Tensor<double> V = metric_gray(load_image(vp.string()));
      if (!F.same_dims(I) || !F.same_dims(V)) {
        report.skipped.push_back(name + ": size mismatch between fused and sources");
        continue;
      }
      MetricRow row;
      row.id = name;
      if (mask.mi) row.mi = mi(F, I, V);
      if (mask.sf) row.sf = sf(F);
      if (mask.ag) row.ag = ag(F);
      if (mask.vif) row.vif = vif(F, I, V);
      if (mask.qabf) row.qabf = qabf(F, I, V);
      report.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      report.skipped.push_back(name + ": " + e.what());
    }
  }
  return report;
}

namespace detail {

inline std::string metric_row_csv(const MetricRow& r, const MetricMask& m) {
  auto cell = [](bool on, double v) {
    if (!on) return std::string();
    char b[32];
    std::snprintf(b, sizeof(b), "%.10g", v);
    return std::string(b);
  };
  return r.id + "," + cell(m.mi, r.mi) + "," + cell(m.sf, r.sf) + "," + cell(m.ag, r.ag) + "," +
         cell(m.vif, r.vif) + "," + cell(m.qabf, r.qabf) + ",,";
}

}  // namespace detail

/// CSV report.  The header pins the conventions that differ between metric
/// implementations in the wild; LIQE and TOPIQ need external perceptual
/// models and stay reserved (empty) columns.
inline std::string metric_report_csv(const MetricReport& report) {
  std::string out;
  out += "# intensity scale: 0-255 (8-bit saved outputs)\n";
  out += "# MI: 256x256 joint histogram, natural log\n";
  out += "# VIF: pixel-domain fusion variant, 4 scales, Gaussian windows 17/9/5/3 (sd=n/5), "
         "sigma_n^2=2, symmetric borders, mean of per-source fidelities\n";
  out += "# Qabf: 3x3 Sobel with symmetric borders; Gamma_g=0.9994 k_g=-15 sigma_g=0.5, "
         "Gamma_a=0.9879 k_a=-22 sigma_a=0.8\n";
  out += "# LIQE/TOPIQ: reserved, require external pretrained models\n";
  out += "image_id,MI,SF,AG,VIF,Qabf,LIQE,TOPIQ\n";
  for (const auto& r : report.rows) out += detail::metric_row_csv(r, report.mask) + "\n";
  if (!report.rows.empty()) out += detail::metric_row_csv(report.mean(), report.mask) + "\n";
  return out;
}

/// Aligned text table of the same numbers, for terminal consumption.
inline std::string metric_report_table(const MetricReport& report) {
  char buf[192];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %8s %8s %8s\n", "image", "MI", "SF", "AG", "VIF",
                "Qabf");
  out += buf;
  const MetricMask& m = report.mask;
  auto cell = [](bool on, double v) {
    char c[16];
    if (on)
      std::snprintf(c, sizeof(c), "%8.4f", v);
    else
      std::snprintf(c, sizeof(c), "%8s", "-");
    return std::string(c);
  };
  auto line = [&](const MetricRow& r) {
    std::snprintf(buf, sizeof(buf), "%-28s %s %s %s %s %s\n", r.id.c_str(), cell(m.mi, r.mi).c_str(),
                  cell(m.sf, r.sf).c_str(), cell(m.ag, r.ag).c_str(), cell(m.vif, r.vif).c_str(),
                  cell(m.qabf, r.qabf).c_str());
    out += buf;
  };
  for (const auto& r : report.rows) line(r);
  if (!report.rows.empty()) line(report.mean());
  for (const auto& s : report.skipped) out += "skipped " + s + "\n";
  return out;
}

}  // namespace contifuse
