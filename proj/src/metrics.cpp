#include "mapfuse/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mapfuse/common.hpp"

namespace mapfuse::metrics {

namespace {

using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Arr to255(const img::Image& im) {
  return im.pix.cast<double>() * 255.0;
}

void check_triple(const img::Image& a, const img::Image& b, const img::Image& c,
                  const char* who) {
  if (a.height() != b.height() || a.width() != b.width() ||
      a.height() != c.height() || a.width() != c.width())
    throw ShapeError(std::string(who) + ": images must share dimensions");
}

int bin256(float v01) {
  const int b = static_cast<int>(std::floor(static_cast<double>(v01) * 255.999));
  return std::clamp(b, 0, 255);
}

// --- filtering helpers -------------------------------------------------------

Eigen::VectorXd gauss1d(int n, double sigma) {
  Eigen::VectorXd k(n);
  const double c = (n - 1) / 2.0;
  for (int i = 0; i < n; ++i)
    k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  k /= k.sum();
  return k;
}

// Separable 'valid' correlation.
Arr sep_valid(const Arr& a, const Eigen::VectorXd& k) {
  const int n = static_cast<int>(k.size());
  const Eigen::Index Ho = a.rows() - n + 1, Wo = a.cols() - n + 1;
  Arr horiz = Arr::Zero(a.rows(), Wo);
  for (int u = 0; u < n; ++u) horiz += k[u] * a.middleCols(u, Wo);
  Arr out = Arr::Zero(Ho, Wo);
  for (int u = 0; u < n; ++u) out += k[u] * horiz.middleRows(u, Ho);
  return out;
}

Eigen::Index fold_sym(Eigen::Index q, Eigen::Index n) {
  while (q < 0 || q >= n) {
    if (q < 0) q = -q - 1;
    if (q >= n) q = 2 * n - 1 - q;
  }
  return q;
}

// Separable same-size correlation with symmetric (edge-repeating) padding.
Arr sep_sym(const Arr& a, const Eigen::VectorXd& k) {
  const int n = static_cast<int>(k.size());
  const int r = n / 2;
  Arr pad(a.rows() + 2 * r, a.cols() + 2 * r);
  for (Eigen::Index i = 0; i < pad.rows(); ++i) {
    const Eigen::Index si = fold_sym(i - r, a.rows());
    for (Eigen::Index j = 0; j < pad.cols(); ++j)
      pad(i, j) = a(si, fold_sym(j - r, a.cols()));
  }
  return sep_valid(pad, k);
}

Eigen::Index fold101(Eigen::Index q, Eigen::Index n) {
  while (q < 0 || q >= n) {
    if (q < 0) q = -q;
    if (q >= n) q = 2 * n - 2 - q;
  }
  return q;
}

// 3x3 Sobel gradient maps, reflect-101 boundary (input already 0-255 scaled).
void sobel(const Arr& a, Arr& gx, Arr& gy) {
  const Eigen::Index H = a.rows(), W = a.cols();
  gx.resize(H, W);
  gy.resize(H, W);
  for (Eigen::Index i = 0; i < H; ++i) {
    const Eigen::Index im = fold101(i - 1, H), ip = fold101(i + 1, H);
    for (Eigen::Index j = 0; j < W; ++j) {
      const Eigen::Index jm = fold101(j - 1, W), jp = fold101(j + 1, W);
      gx(i, j) = a(im, jp) + 2 * a(i, jp) + a(ip, jp) - a(im, jm) - 2 * a(i, jm) -
                 a(ip, jm);
      gy(i, j) = a(ip, jm) + 2 * a(ip, j) + a(ip, jp) - a(im, jm) - 2 * a(im, j) -
                 a(im, jp);
    }
  }
}

Arr block2(const Arr& a) {
  const Eigen::Index H = a.rows() / 2, W = a.cols() / 2;
  Arr out(H, W);
  for (Eigen::Index i = 0; i < H; ++i)
    for (Eigen::Index j = 0; j < W; ++j)
      out(i, j) = (a(2 * i, 2 * j) + a(2 * i, 2 * j + 1) + a(2 * i + 1, 2 * j) +
                   a(2 * i + 1, 2 * j + 1)) *
                  0.25;
  return out;
}

double pearson(const Arr& a, const Arr& b) {
  const double ma = a.mean(), mb = b.mean();
  const Arr da = a - ma, db = b - mb;
  const double va = da.square().sum(), vb = db.square().sum();
  if (va <= 0 || vb <= 0) return 0.0;
  return (da * db).sum() / std::sqrt(va * vb);
}

double mi_pair(const img::Image& a, const img::Image& b) {
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> pa{}, pb{};
  const double n = static_cast<double>(a.pix.size());
  for (Eigen::Index i = 0; i < a.height(); ++i)
    for (Eigen::Index j = 0; j < a.width(); ++j) {
      const int ba = bin256(a.pix(i, j)), bb = bin256(b.pix(i, j));
      joint[ba * 256 + bb] += 1.0;
      pa[ba] += 1.0;
      pb[bb] += 1.0;
    }
  double mi = 0;
  for (int i = 0; i < 256; ++i) {
    if (pa[i] == 0) continue;
    for (int j = 0; j < 256; ++j) {
      const double c = joint[i * 256 + j];
      if (c > 0) mi += (c / n) * std::log2(c * n / (pa[i] * pb[j]));
    }
  }
  return mi;
}

// Multi-scale SSIM of one 0-255 pair; see metric_ms_ssim for the conventions.
double ms_ssim_pair(Arr a, Arr b) {
  static const double wts[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const Eigen::VectorXd k = gauss1d(11, 1.5);
  const double c1 = 2.55 * 2.55, c2 = 7.65 * 7.65;
  int scales = 0;
  const Eigen::Index mind = std::min(a.rows(), a.cols());
  for (int s = 1; s <= 5; ++s)
    if (mind / (Eigen::Index(1) << (s - 1)) >= 11) scales = s;
  if (scales == 0)
    throw ShapeError("ms_ssim: image smaller than the 11x11 window");
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += wts[s];
  double ms = 1.0;
  for (int s = 0; s < scales; ++s) {
    const Arr mu1 = sep_valid(a, k), mu2 = sep_valid(b, k);
    const Arr s11 = sep_valid(a * a, k) - mu1 * mu1;
    const Arr s22 = sep_valid(b * b, k) - mu2 * mu2;
    const Arr s12 = sep_valid(a * b, k) - mu1 * mu2;
    const double l =
        ((2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)).mean();
    const double cs = ((2 * s12 + c2) / (s11 + s22 + c2)).mean();
    const double w = wts[s] / wsum;
    ms *= std::pow(std::max(cs, 0.0), w);
    if (s == scales - 1) ms *= std::pow(std::max(l, 0.0), w);
    if (s < scales - 1) {
      a = block2(a);
      b = block2(b);
    }
  }
  return ms;
}

// Pixel-domain VIF of dist against ref across four Gaussian scales
// (windows 17/9/5/3, sigma N/5, symmetric-boundary same-size filtering,
// decimation by 2 between scales, noise variance 2).
double vif_pair(Arr refi, Arr dist) {
  constexpr double sigma_nsq = 2.0, eps = 1e-10;
  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (4 - scale + 1)) + 1;
    const Eigen::VectorXd k = gauss1d(n, n / 5.0);
    if (scale > 1) {
      const Arr fr = sep_sym(refi, k), fd = sep_sym(dist, k);
      const Eigen::Index H = (fr.rows() + 1) / 2, W = (fr.cols() + 1) / 2;
      Arr r2(H, W), d2(H, W);
      for (Eigen::Index i = 0; i < H; ++i)
        for (Eigen::Index j = 0; j < W; ++j) {
          r2(i, j) = fr(2 * i, 2 * j);
          d2(i, j) = fd(2 * i, 2 * j);
        }
      refi = std::move(r2);
      dist = std::move(d2);
    }
    const Arr mu1 = sep_sym(refi, k), mu2 = sep_sym(dist, k);
    const Arr m11 = sep_sym(refi * refi, k);
    const Arr m22 = sep_sym(dist * dist, k);
    const Arr m12 = sep_sym(refi * dist, k);
    for (Eigen::Index i = 0; i < refi.rows(); ++i)
      for (Eigen::Index j = 0; j < refi.cols(); ++j) {
        double s1 = std::max(m11(i, j) - mu1(i, j) * mu1(i, j), 0.0);
        const double s2 = std::max(m22(i, j) - mu2(i, j) * mu2(i, j), 0.0);
        const double s12 = m12(i, j) - mu1(i, j) * mu2(i, j);
        double g = s12 / (s1 + eps);
        double sv = s2 - g * s12;
        if (s1 < eps) {
          g = 0;
          sv = s2;
          s1 = 0;
        }
        if (s2 < eps) {
          g = 0;
          sv = 0;
        }
        if (g < 0) {
          sv = s2;
          g = 0;
        }
        if (sv <= eps) sv = eps;
        num += std::log10(1.0 + g * g * s1 / (sv + sigma_nsq));
        den += std::log10(1.0 + s1 / sigma_nsq);
      }
  }
  return den > 0 ? num / den : 1.0;
}

}  // namespace

Histogram256 Histogram256::of(const img::Image& im) {
  Histogram256 h;
  for (Eigen::Index i = 0; i < im.height(); ++i)
    for (Eigen::Index j = 0; j < im.width(); ++j) ++h.count[bin256(im.pix(i, j))];
  const double n = static_cast<double>(im.pix.size());
  for (int b = 0; b < 256; ++b) h.prob[b] = static_cast<double>(h.count[b]) / n;
  return h;
}

double metric_en(const img::Image& if_) {
  const auto h = Histogram256::of(if_);
  double e = 0;
  for (double p : h.prob)
    if (p > 0) e -= p * std::log2(p);
  return e;
}

double metric_sd(const img::Image& if_) {
  const Arr a = to255(if_);
  const double mu = a.mean();
  return std::sqrt((a - mu).square().mean());
}

double metric_sf(const img::Image& if_) {
  if (if_.height() < 2 || if_.width() < 2)
    throw ShapeError("sf: image must be at least 2x2");
  const Arr a = to255(if_);
  const Eigen::Index H = a.rows(), W = a.cols();
  const double rf =
      (a.rightCols(W - 1) - a.leftCols(W - 1)).square().sum() /
      static_cast<double>(H * (W - 1));
  const double cf =
      (a.bottomRows(H - 1) - a.topRows(H - 1)).square().sum() /
      static_cast<double>((H - 1) * W);
  return std::sqrt(rf + cf);
}

double metric_ei(const img::Image& if_) {
  if (if_.height() < 2 || if_.width() < 2)
    throw ShapeError("ei: image must be at least 2x2");
  Arr gx, gy;
  sobel(to255(if_), gx, gy);
  return (gx.square() + gy.square()).sqrt().mean();
}

double metric_ce(const img::Image& ix, const img::Image& iy, const img::Image& if_) {
  check_triple(ix, iy, if_, "ce");
  const auto hf = Histogram256::of(if_);
  auto kl = [&](const Histogram256& p) {
    double d = 0;
    for (int i = 0; i < 256; ++i)
      if (p.prob[i] > 0)
        d += p.prob[i] * std::log2(p.prob[i] / std::max(hf.prob[i], 1e-12));
    return d;
  };
  return 0.5 * (kl(Histogram256::of(ix)) + kl(Histogram256::of(iy)));
}

double metric_mi(const img::Image& ix, const img::Image& iy, const img::Image& if_) {
  check_triple(ix, iy, if_, "mi");
  return mi_pair(ix, if_) + mi_pair(iy, if_);
}

double metric_scd(const img::Image& ix, const img::Image& iy, const img::Image& if_) {
  check_triple(ix, iy, if_, "scd");
  const Arr ax = to255(ix), ay = to255(iy), af = to255(if_);
  return pearson(af - ay, ax) + pearson(af - ax, ay);
}

double metric_qabf(const img::Image& ix, const img::Image& iy,
                   const img::Image& if_) {
  check_triple(ix, iy, if_, "qabf");
  constexpr double Tg = 0.9994, kg = -15.0, sg = 0.5;
  constexpr double Ta = 0.9879, ka = -22.0, sa = 0.8;
  const double half_pi = std::acos(0.0);
  Arr gxa, gya, gxb, gyb, gxf, gyf;
  sobel(to255(ix), gxa, gya);
  sobel(to255(iy), gxb, gyb);
  sobel(to255(if_), gxf, gyf);
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < ix.height(); ++i)
    for (Eigen::Index j = 0; j < ix.width(); ++j) {
      const double gF = std::hypot(gxf(i, j), gyf(i, j));
      const double aF = (gxf(i, j) == 0.0 && gyf(i, j) == 0.0)
                            ? 0.0
                            : std::atan(gyf(i, j) / gxf(i, j));
      auto side = [&](const Arr& gxs, const Arr& gys) {
        const double gS = std::hypot(gxs(i, j), gys(i, j));
        const double aS = (gxs(i, j) == 0.0 && gys(i, j) == 0.0)
                              ? 0.0
                              : std::atan(gys(i, j) / gxs(i, j));
        const double G = (gS == gF) ? 1.0 : (gS > gF ? gF / gS : gS / gF);
        const double A = 1.0 - std::abs(aS - aF) / half_pi;
        const double Qg = Tg / (1.0 + std::exp(kg * (G - sg)));
        const double Qa = Ta / (1.0 + std::exp(ka * (A - sa)));
        return std::make_pair(Qg * Qa, gS);
      };
      const auto [qa, ga] = side(gxa, gya);
      const auto [qb, gb] = side(gxb, gyb);
      num += qa * ga + qb * gb;
      den += ga + gb;
    }
  return den > 0 ? num / den : 0.0;
}

double metric_ms_ssim(const img::Image& ix, const img::Image& iy,
                      const img::Image& if_) {
  check_triple(ix, iy, if_, "ms_ssim");
  return 0.5 * (ms_ssim_pair(to255(ix), to255(if_)) +
                ms_ssim_pair(to255(iy), to255(if_)));
}

double metric_vif(const img::Image& ix, const img::Image& iy,
                  const img::Image& if_) {
  check_triple(ix, iy, if_, "vif");
  return 0.5 *
         (vif_pair(to255(ix), to255(if_)) + vif_pair(to255(iy), to255(if_)));
}

double MetricReport::at(const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return v;
  throw ConfigError("metric not in report: " + name);
}

const std::vector<std::string>& all_metric_names() {
  static const std::vector<std::string> names = {
      "EI", "CE", "SF", "EN", "Qabf", "MS_SSIM", "SD", "VIF", "SCD", "MI"};
  return names;
}

const std::vector<std::string>& default_metric_names() {
  static const std::vector<std::string> names = {"EI", "CE",      "SF", "EN",
                                                 "Qabf", "MS_SSIM", "SD", "VIF"};
  return names;
}

MetricReport evaluate_all(const img::Image& ix, const img::Image& iy,
                          const img::Image& if_,
                          const std::vector<std::string>& names) {
  if (ix.pix.rows() != iy.pix.rows() || ix.pix.cols() != iy.pix.cols() ||
      ix.pix.rows() != if_.pix.rows() || ix.pix.cols() != if_.pix.cols())
    throw ShapeError("evaluate_all: images are " + std::to_string(ix.pix.rows()) +
                     "x" + std::to_string(ix.pix.cols()) + ", " +
                     std::to_string(iy.pix.rows()) + "x" +
                     std::to_string(iy.pix.cols()) + ", " +
                     std::to_string(if_.pix.rows()) + "x" +
                     std::to_string(if_.pix.cols()) + " but must match");
  MetricReport r;
  for (const auto& name : names) {
    double v;
    if (name == "EN")
      v = metric_en(if_);
    else if (name == "SD")
      v = metric_sd(if_);
    else if (name == "SF")
      v = metric_sf(if_);
    else if (name == "EI")
      v = metric_ei(if_);
    else if (name == "CE")
      v = metric_ce(ix, iy, if_);
    else if (name == "MI")
      v = metric_mi(ix, iy, if_);
    else if (name == "SCD")
      v = metric_scd(ix, iy, if_);
    else if (name == "Qabf")
      v = metric_qabf(ix, iy, if_);
    else if (name == "MS_SSIM")
      v = metric_ms_ssim(ix, iy, if_);
    else if (name == "VIF")
      v = metric_vif(ix, iy, if_);
    else {
      std::string valid;
      for (const auto& m : all_metric_names()) valid += (valid.empty() ? "" : ", ") + m;
      throw ConfigError("unknown metric '" + name + "' (valid: " + valid + ")");
    }
    r.values.emplace_back(name, v);
  }
  return r;
}

}  // namespace mapfuse::metrics
