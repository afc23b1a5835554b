#pragma once

// Naive, loop-level reference implementations used by the test suite and by
// the `selftest` command. Each function is a direct transliteration of the
// defining formula in double precision and is deliberately kept independent
// of the optimized library code paths, so the two can be checked against
// each other.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "mapfuse/tensor.hpp"

namespace mapfuse::ref {

using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Network-op references
// ---------------------------------------------------------------------------

// Same-size zero-padded convolution, six nested loops.
inline nn::Tensor<double> conv2d_ref(const nn::Tensor<double>& x,
                                     const nn::Tensor<double>& w,
                                     const nn::Tensor<double>& b) {
  const Eigen::Index Cout = w.dim[0], Cin = w.dim[1], K = w.dim[2];
  const Eigen::Index H = x.dim[1], W = x.dim[2], R = K / 2;
  auto out = nn::Tensor<double>::chw(Cout, H, W);
  for (Eigen::Index o = 0; o < Cout; ++o)
    for (Eigen::Index i = 0; i < H; ++i)
      for (Eigen::Index j = 0; j < W; ++j) {
        double acc = b.data[o];
        for (Eigen::Index c = 0; c < Cin; ++c)
          for (Eigen::Index ky = 0; ky < K; ++ky)
            for (Eigen::Index kx = 0; kx < K; ++kx) {
              const Eigen::Index ii = i + ky - R, jj = j + kx - R;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              acc += x.data[(c * H + ii) * W + jj] *
                     w.data[((o * Cin + c) * K + ky) * K + kx];
            }
        out.data[(o * H + i) * W + j] = acc;
      }
  return out;
}

inline nn::Tensor<double> matmul_ref(const nn::Tensor<double>& a,
                                     const nn::Tensor<double>& b) {
  const Eigen::Index R = a.dim[0], Kk = a.dim[1], C = b.dim[1];
  auto out = nn::Tensor<double>::mat(R, C);
  for (Eigen::Index i = 0; i < R; ++i)
    for (Eigen::Index j = 0; j < C; ++j) {
      double acc = 0;
      for (Eigen::Index k = 0; k < Kk; ++k)
        acc += a.data[i * Kk + k] * b.data[k * C + j];
      out.data[i * C + j] = acc;
    }
  return out;
}

inline nn::Tensor<double> softmax_rows_ref(const nn::Tensor<double>& a) {
  const Eigen::Index R = a.dim[0], C = a.dim[1];
  auto out = nn::Tensor<double>::mat(R, C);
  for (Eigen::Index i = 0; i < R; ++i) {
    double m = a.data[i * C];
    for (Eigen::Index j = 1; j < C; ++j) m = std::max(m, a.data[i * C + j]);
    double s = 0;
    for (Eigen::Index j = 0; j < C; ++j) {
      out.data[i * C + j] = std::exp(a.data[i * C + j] - m);
      s += out.data[i * C + j];
    }
    for (Eigen::Index j = 0; j < C; ++j) out.data[i * C + j] /= s;
  }
  return out;
}

inline nn::Tensor<double> downsample2x_ref(const nn::Tensor<double>& x) {
  const Eigen::Index C = x.dim[0], H = x.dim[1], W = x.dim[2];
  auto out = nn::Tensor<double>::chw(C, H / 2, W / 2);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index i = 0; i < H / 2; ++i)
      for (Eigen::Index j = 0; j < W / 2; ++j) {
        double s = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            s += x.data[(c * H + 2 * i + a) * W + 2 * j + b];
        out.data[(c * (H / 2) + i) * (W / 2) + j] = s / 4.0;
      }
  return out;
}

inline nn::Tensor<double> upsample2x_ref(const nn::Tensor<double>& x) {
  const Eigen::Index C = x.dim[0], H = x.dim[1], W = x.dim[2];
  auto out = nn::Tensor<double>::chw(C, 2 * H, 2 * W);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index i = 0; i < 2 * H; ++i)
      for (Eigen::Index j = 0; j < 2 * W; ++j)
        out.data[(c * 2 * H + i) * 2 * W + j] =
            x.data[(c * H + i / 2) * W + j / 2];
  return out;
}

// Cross-feature attention maps composed from the matmul/softmax references:
// Q = flatten(f_x) (h*w x C), K = flatten(f_y); A = Q K^T / sqrt(C);
// P = row softmax; map_x = reshape(P Q), map_y = reshape(P K).
inline std::pair<nn::Tensor<double>, nn::Tensor<double>> deep_maps_ref(
    const nn::Tensor<double>& fx, const nn::Tensor<double>& fy) {
  const Eigen::Index C = fx.dim[0], h = fx.dim[1], w = fx.dim[2];
  auto Q = nn::Tensor<double>::mat(h * w, C);
  auto K = nn::Tensor<double>::mat(h * w, C);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index p = 0; p < h * w; ++p) {
      Q.data[p * C + c] = fx.data[c * h * w + p];
      K.data[p * C + c] = fy.data[c * h * w + p];
    }
  auto Kt = nn::Tensor<double>::mat(C, h * w);
  for (Eigen::Index i = 0; i < h * w; ++i)
    for (Eigen::Index c = 0; c < C; ++c) Kt.data[c * h * w + i] = K.data[i * C + c];
  auto A = matmul_ref(Q, Kt);
  const double inv = 1.0 / std::sqrt(static_cast<double>(C));
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data[i] *= inv;
  auto P = softmax_rows_ref(A);
  auto PQ = matmul_ref(P, Q);
  auto PK = matmul_ref(P, K);
  auto mx = nn::Tensor<double>::chw(C, h, w);
  auto my = nn::Tensor<double>::chw(C, h, w);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index p = 0; p < h * w; ++p) {
      mx.data[c * h * w + p] = PQ.data[p * C + c];
      my.data[c * h * w + p] = PK.data[p * C + c];
    }
  return {std::move(mx), std::move(my)};
}

// ---------------------------------------------------------------------------
// Window-SSIM loss references (images in [0,1])
// ---------------------------------------------------------------------------

inline double mean_ref(const Arr& a) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += a(i, j);
  return s / static_cast<double>(a.rows() * a.cols());
}

inline double variance_ref(const Arr& a) {
  const double mu = mean_ref(a);
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += (a(i, j) - mu) * (a(i, j) - mu);
  return s / static_cast<double>(a.rows() * a.cols());
}

// Plain (uniform-window, population-statistic) SSIM of two equal-size patches.
inline double ssim_window_ref(const Arr& a, const Arr& b, double dynamic_range = 1.0) {
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const double mu_a = mean_ref(a), mu_b = mean_ref(b);
  double va = 0, vb = 0, cab = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      va += (a(i, j) - mu_a) * (a(i, j) - mu_a);
      vb += (b(i, j) - mu_b) * (b(i, j) - mu_b);
      cab += (a(i, j) - mu_a) * (b(i, j) - mu_b);
    }
  const double n = static_cast<double>(a.rows() * a.cols());
  va /= n;
  vb /= n;
  cab /= n;
  return ((2 * mu_a * mu_b + c1) * (2 * cab + c2)) /
         ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
}

struct WindowLossRef {
  double loss;
  Eigen::Index window_count;
  double frac_selected_x;
};

// Brute-force sliding-window gated SSIM loss. For each window position the
// gate picks source X when its window statistic strictly exceeds Y's
// (ties go to Y); the statistic is the variance or the mean.
inline WindowLossRef window_loss_ref(const Arr& ix, const Arr& iy, const Arr& f,
                                     int window, int stride, bool mean_gate,
                                     double dynamic_range = 1.0) {
  double sum = 0, fx = 0;
  Eigen::Index cnt = 0;
  for (Eigen::Index i = 0; i + window <= ix.rows(); i += stride)
    for (Eigen::Index j = 0; j + window <= ix.cols(); j += stride) {
      Arr wx = ix.block(i, j, window, window);
      Arr wy = iy.block(i, j, window, window);
      Arr wf = f.block(i, j, window, window);
      bool sel_x;
      if (mean_gate)
        sel_x = mean_ref(wx) > mean_ref(wy);
      else
        sel_x = variance_ref(wx) > variance_ref(wy);
      sum += ssim_window_ref(sel_x ? wx : wy, wf, dynamic_range);
      fx += sel_x ? 1.0 : 0.0;
      ++cnt;
    }
  return {1.0 - sum / static_cast<double>(cnt), cnt,
          fx / static_cast<double>(cnt)};
}

// ---------------------------------------------------------------------------
// Metric references (images in [0,1]; statistics on the 0-255 scale)
// ---------------------------------------------------------------------------

inline int bin256_ref(double v01) {
  int b = static_cast<int>(std::floor(v01 * 255.999));
  return std::clamp(b, 0, 255);
}

inline std::array<double, 256> hist256_ref(const Arr& a) {
  std::array<double, 256> h{};
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) h[bin256_ref(a(i, j))] += 1.0;
  const double n = static_cast<double>(a.rows() * a.cols());
  for (auto& v : h) v /= n;
  return h;
}

inline double en_ref(const Arr& a) {
  const auto h = hist256_ref(a);
  double e = 0;
  for (double p : h)
    if (p > 0) e -= p * std::log2(p);
  return e;
}

inline double sd_ref(const Arr& a) {
  double mu = 0;
  const double n = static_cast<double>(a.rows() * a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) mu += 255.0 * a(i, j);
  mu /= n;
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = 255.0 * a(i, j) - mu;
      s += d * d;
    }
  return std::sqrt(s / n);
}

inline double sf_ref(const Arr& a) {
  double rf = 0, cf = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 1; j < a.cols(); ++j) {
      const double d = 255.0 * (a(i, j) - a(i, j - 1));
      rf += d * d;
    }
  for (Eigen::Index i = 1; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = 255.0 * (a(i, j) - a(i - 1, j));
      cf += d * d;
    }
  rf /= static_cast<double>(a.rows() * (a.cols() - 1));
  cf /= static_cast<double>((a.rows() - 1) * a.cols());
  return std::sqrt(rf + cf);
}

// Reflect-101 index fold (mirror about the edge pixel, edge not repeated).
inline Eigen::Index refl101_ref(Eigen::Index q, Eigen::Index n) {
  while (q < 0 || q >= n) {
    if (q < 0) q = -q;
    if (q >= n) q = 2 * n - 2 - q;
  }
  return q;
}

// 3x3 Sobel gradients with reflect-101 boundary, 0-255 scale.
inline void sobel_ref(const Arr& a, Arr& gx, Arr& gy) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  const Eigen::Index H = a.rows(), W = a.cols();
  gx.resize(H, W);
  gy.resize(H, W);
  for (Eigen::Index i = 0; i < H; ++i)
    for (Eigen::Index j = 0; j < W; ++j) {
      double sx = 0, sy = 0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v) {
          const double p =
              255.0 * a(refl101_ref(i + u, H), refl101_ref(j + v, W));
          sx += kx[u + 1][v + 1] * p;
          sy += ky[u + 1][v + 1] * p;
        }
      gx(i, j) = sx;
      gy(i, j) = sy;
    }
}

inline double ei_ref(const Arr& a) {
  Arr gx, gy;
  sobel_ref(a, gx, gy);
  double s = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      s += std::sqrt(gx(i, j) * gx(i, j) + gy(i, j) * gy(i, j));
  return s / static_cast<double>(a.rows() * a.cols());
}

inline double kl_ref(const std::array<double, 256>& p,
                     const std::array<double, 256>& q) {
  double d = 0;
  for (int i = 0; i < 256; ++i)
    if (p[i] > 0) d += p[i] * std::log2(p[i] / std::max(q[i], 1e-12));
  return d;
}

inline double ce_ref(const Arr& x, const Arr& y, const Arr& f) {
  const auto hx = hist256_ref(x), hy = hist256_ref(y), hf = hist256_ref(f);
  return 0.5 * (kl_ref(hx, hf) + kl_ref(hy, hf));
}

inline double mi_pair_ref(const Arr& a, const Arr& b) {
  std::vector<double> joint(256 * 256, 0.0);
  std::array<double, 256> pa{}, pb{};
  const double n = static_cast<double>(a.rows() * a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const int ba = bin256_ref(a(i, j)), bb = bin256_ref(b(i, j));
      joint[ba * 256 + bb] += 1.0;
      pa[ba] += 1.0;
      pb[bb] += 1.0;
    }
  double mi = 0;
  for (int i = 0; i < 256; ++i)
    for (int j = 0; j < 256; ++j) {
      const double pj = joint[i * 256 + j] / n;
      if (pj > 0) mi += pj * std::log2(pj * n * n / (pa[i] * pb[j]));
    }
  return mi;
}

inline double mi_ref(const Arr& x, const Arr& y, const Arr& f) {
  return mi_pair_ref(x, f) + mi_pair_ref(y, f);
}

inline double pearson_ref(const Arr& a, const Arr& b) {
  const double ma = mean_ref(a), mb = mean_ref(b);
  double va = 0, vb = 0, cab = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      va += (a(i, j) - ma) * (a(i, j) - ma);
      vb += (b(i, j) - mb) * (b(i, j) - mb);
      cab += (a(i, j) - ma) * (b(i, j) - mb);
    }
  if (va <= 0 || vb <= 0) return 0.0;
  return cab / std::sqrt(va * vb);
}

inline double scd_ref(const Arr& x, const Arr& y, const Arr& f) {
  return pearson_ref(f - y, x) + pearson_ref(f - x, y);
}

// Gradient-based edge-preservation score (per-pixel strength/orientation
// agreement pushed through the reference sigmoids, weighted by source edge
// strength).
inline double qabf_ref(const Arr& x, const Arr& y, const Arr& f) {
  constexpr double Tg = 0.9994, kg = -15.0, sg = 0.5;
  constexpr double Ta = 0.9879, ka = -22.0, sa = 0.8;
  const double half_pi = std::acos(0.0);
  Arr gxa, gya, gxb, gyb, gxf, gyf;
  sobel_ref(x, gxa, gya);
  sobel_ref(y, gxb, gyb);
  sobel_ref(f, gxf, gyf);
  auto strength = [](double gx, double gy) { return std::sqrt(gx * gx + gy * gy); };
  auto angle = [](double gx, double gy) {
    if (gx == 0.0 && gy == 0.0) return 0.0;
    return std::atan(gy / gx);  // gx==0 -> +-pi/2 via +-inf
  };
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double gA = strength(gxa(i, j), gya(i, j));
      const double gB = strength(gxb(i, j), gyb(i, j));
      const double gF = strength(gxf(i, j), gyf(i, j));
      const double aA = angle(gxa(i, j), gya(i, j));
      const double aB = angle(gxb(i, j), gyb(i, j));
      const double aF = angle(gxf(i, j), gyf(i, j));
      auto q = [&](double gS, double aS) {
        const double G = (gS == gF) ? 1.0
                                    : (gS > gF ? gF / gS : gS / gF);
        const double A = 1.0 - std::abs(aS - aF) / half_pi;
        const double Qg = Tg / (1.0 + std::exp(kg * (G - sg)));
        const double Qa = Ta / (1.0 + std::exp(ka * (A - sa)));
        return Qg * Qa;
      };
      num += q(gA, aA) * gA + q(gB, aB) * gB;
      den += gA + gB;
    }
  return den > 0 ? num / den : 0.0;
}

inline std::vector<double> gauss1d_ref(int n, double sigma) {
  std::vector<double> k(n);
  const double c = (n - 1) / 2.0;
  double s = 0;
  for (int i = 0; i < n; ++i) {
    k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    s += k[i];
  }
  for (auto& v : k) v /= s;
  return k;
}

// 'valid' 2-D correlation with a separable Gaussian, done as one direct
// double loop over the kernel footprint.
inline Arr filter_valid_ref(const Arr& a, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const Eigen::Index Ho = a.rows() - n + 1, Wo = a.cols() - n + 1;
  Arr out(Ho, Wo);
  for (Eigen::Index i = 0; i < Ho; ++i)
    for (Eigen::Index j = 0; j < Wo; ++j) {
      double s = 0;
      for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) s += k[u] * k[v] * a(i + u, j + v);
      out(i, j) = s;
    }
  return out;
}

// Symmetric (edge-repeating) index fold: ...cba|abc...|cba...
inline Eigen::Index refl_sym_ref(Eigen::Index q, Eigen::Index n) {
  while (q < 0 || q >= n) {
    if (q < 0) q = -q - 1;
    if (q >= n) q = 2 * n - 1 - q;
  }
  return q;
}

// Same-size 2-D correlation with symmetric boundary handling.
inline Arr filter_sym_ref(const Arr& a, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int r = n / 2;
  Arr out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      double s = 0;
      for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v)
          s += k[u] * k[v] *
               a(refl_sym_ref(i + u - r, a.rows()), refl_sym_ref(j + v - r, a.cols()));
      out(i, j) = s;
    }
  return out;
}

// Non-overlapping 2x2 block mean; trailing odd row/column dropped.
inline Arr block2_ref(const Arr& a) {
  const Eigen::Index H = a.rows() / 2, W = a.cols() / 2;
  Arr out(H, W);
  for (Eigen::Index i = 0; i < H; ++i)
    for (Eigen::Index j = 0; j < W; ++j)
      out(i, j) = (a(2 * i, 2 * j) + a(2 * i, 2 * j + 1) + a(2 * i + 1, 2 * j) +
                   a(2 * i + 1, 2 * j + 1)) /
                  4.0;
  return out;
}

// Multi-scale SSIM of one pair on the 0-255 scale. Up to five scales with the
// standard exponents; when the smaller image dimension cannot support the
// 11x11 window at a scale, the scale count shrinks and the exponents are
// renormalized. Contrast terms are clamped at zero before exponentiation.
inline double ms_ssim_pair_ref(Arr a, Arr b) {
  static const double wts[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const auto k = gauss1d_ref(11, 1.5);
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  int scales = 0;
  const Eigen::Index mind = std::min(a.rows(), a.cols());
  for (int s = 1; s <= 5; ++s)
    if (mind / (Eigen::Index(1) << (s - 1)) >= 11) scales = s;
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += wts[s];
  double ms = 1.0;
  for (int s = 0; s < scales; ++s) {
    const Arr mu1 = filter_valid_ref(a, k), mu2 = filter_valid_ref(b, k);
    const Arr s11 = filter_valid_ref(a * a, k) - mu1 * mu1;
    const Arr s22 = filter_valid_ref(b * b, k) - mu2 * mu2;
    const Arr s12 = filter_valid_ref(a * b, k) - mu1 * mu2;
    const Arr l =
        (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
    const Arr cs = (2 * s12 + c2) / (s11 + s22 + c2);
    const double w = wts[s] / wsum;
    ms *= std::pow(std::max(mean_ref(cs), 0.0), w);
    if (s == scales - 1) ms *= std::pow(std::max(mean_ref(l), 0.0), w);
    if (s < scales - 1) {
      a = block2_ref(a);
      b = block2_ref(b);
    }
  }
  return ms;
}

inline double ms_ssim_ref(const Arr& x, const Arr& y, const Arr& f) {
  return 0.5 * (ms_ssim_pair_ref(255.0 * x, 255.0 * f) +
                ms_ssim_pair_ref(255.0 * y, 255.0 * f));
}

// Pixel-domain visual information fidelity of dist against ref0, four scales
// with Gaussian windows 17/9/5/3 (sigma = N/5), same-size symmetric-boundary
// filtering, decimation by 2 between scales, noise variance 2 on the 0-255
// scale.
inline double vif_pair_ref(Arr ref0, Arr dist) {
  constexpr double sigma_nsq = 2.0, eps = 1e-10;
  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (4 - scale + 1)) + 1;
    const auto k = gauss1d_ref(n, n / 5.0);
    if (scale > 1) {
      Arr fr = filter_sym_ref(ref0, k), fd = filter_sym_ref(dist, k);
      const Eigen::Index H = (fr.rows() + 1) / 2, W = (fr.cols() + 1) / 2;
      Arr r2(H, W), d2(H, W);
      for (Eigen::Index i = 0; i < H; ++i)
        for (Eigen::Index j = 0; j < W; ++j) {
          r2(i, j) = fr(2 * i, 2 * j);
          d2(i, j) = fd(2 * i, 2 * j);
        }
      ref0 = r2;
      dist = d2;
    }
    const Arr mu1 = filter_sym_ref(ref0, k), mu2 = filter_sym_ref(dist, k);
    const Arr m11 = filter_sym_ref(ref0 * ref0, k);
    const Arr m22 = filter_sym_ref(dist * dist, k);
    const Arr m12 = filter_sym_ref(ref0 * dist, k);
    for (Eigen::Index i = 0; i < ref0.rows(); ++i)
      for (Eigen::Index j = 0; j < ref0.cols(); ++j) {
        double s1 = std::max(m11(i, j) - mu1(i, j) * mu1(i, j), 0.0);
        double s2 = std::max(m22(i, j) - mu2(i, j) * mu2(i, j), 0.0);
        double s12 = m12(i, j) - mu1(i, j) * mu2(i, j);
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

inline double vif_ref(const Arr& x, const Arr& y, const Arr& f) {
  return 0.5 * (vif_pair_ref(255.0 * x, 255.0 * f) +
                vif_pair_ref(255.0 * y, 255.0 * f));
}

// ---------------------------------------------------------------------------
// Optimizer reference
// ---------------------------------------------------------------------------

// Closed-form Adam on one scalar given the gradient sequence.
inline double adam_scalar_ref(double w0, const std::vector<double>& grads,
                              double lr, double b1 = 0.9, double b2 = 0.999,
                              double eps = 1e-8) {
  double w = w0, m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    w -= lr * mh / (std::sqrt(vh) + eps);
  }
  return w;
}

}  // namespace mapfuse::ref
