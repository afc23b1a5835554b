#pragma once

#include <string>

#include "mapfuse/graph.hpp"
#include "mapfuse/image.hpp"

namespace mapfuse::loss {

struct SsimParams {
  int window = 11;
  double dynamic_range = 1.0;  // images live in [0,1]
  double c1() const { return 0.01 * dynamic_range * 0.01 * dynamic_range; }
  double c2() const { return 0.03 * dynamic_range * 0.03 * dynamic_range; }
};

enum class Gate { variance, mean };

inline Gate parse_gate(const std::string& s) {
  if (s == "var" || s == "variance") return Gate::variance;
  if (s == "mean") return Gate::mean;
  throw ConfigError("unknown loss gate '" + s + "' (valid: var, mean)");
}

struct LossReport {
  double loss = 0;
  Eigen::Index window_count = 0;
  double frac_selected_x = 0;
};

template <typename S>
struct LossGraph {
  nn::Var<S> loss;
  Eigen::Index window_count = 0;
  double frac_selected_x = 0;
};

// Gated sliding-window SSIM loss wired into the graph: all window statistics
// are uniform k x k means of the images and their products; the gate mask is
// a constant (it depends on the source windows only), so the gradient flows
// through the fused image alone. Loss = 1 - mean over the strided window
// grid of SSIM(gated source window, fused window).
template <typename S>
LossGraph<S> build_window_ssim_loss(nn::Graph<S>& g, nn::Var<S> fused,
                                    const nn::Tensor<S>& ix,
                                    const nn::Tensor<S>& iy, Gate gate,
                                    int stride, const SsimParams& p = {}) {
  const nn::Tensor<S>& F = g.value(fused.id);
  if (F.rank != 3 || F.dim[0] != 1)
    throw ShapeError("window loss: fused must be (1,H,W), got " + F.shape_str());
  nn::check_same_shape("window loss", F.rank, F.dim, ix.rank, ix.dim);
  nn::check_same_shape("window loss", F.rank, F.dim, iy.rank, iy.dim);
  const int k = p.window;
  if (F.dim[1] < k || F.dim[2] < k)
    throw ShapeError("window loss: image " + F.shape_str() +
                     " smaller than the " + std::to_string(k) + "x" +
                     std::to_string(k) + " window");
  if (stride < 1) throw ConfigError("window loss: stride must be >= 1");

  const S c1 = S(p.c1()), c2 = S(p.c2());
  auto cx = g.constant(ix);
  auto cy = g.constant(iy);

  auto mu_f = nn::box_mean(fused, k);
  auto mu_x = nn::box_mean(cx, k);
  auto mu_y = nn::box_mean(cy, k);
  auto var_f = nn::sub(nn::box_mean(nn::mul(fused, fused), k),
                       nn::mul(mu_f, mu_f));
  auto var_x = nn::sub(nn::box_mean(nn::mul(cx, cx), k), nn::mul(mu_x, mu_x));
  auto var_y = nn::sub(nn::box_mean(nn::mul(cy, cy), k), nn::mul(mu_y, mu_y));

  auto ssim_against = [&](nn::Var<S> mu_s, nn::Var<S> var_s, nn::Var<S> src) {
    auto cov = nn::sub(nn::box_mean(nn::mul(src, fused), k),
                       nn::mul(mu_s, mu_f));
    auto n1 = nn::add_scalar(nn::scale(nn::mul(mu_s, mu_f), S(2)), c1);
    auto n2 = nn::add_scalar(nn::scale(cov, S(2)), c2);
    auto d1 = nn::add_scalar(nn::add(nn::mul(mu_s, mu_s), nn::mul(mu_f, mu_f)), c1);
    auto d2 = nn::add_scalar(nn::add(var_s, var_f), c2);
    return nn::divide(nn::mul(n1, n2), nn::mul(d1, d2));
  };
  auto ssim_x = ssim_against(mu_x, var_x, cx);
  auto ssim_y = ssim_against(mu_y, var_y, cy);

  // Gate: select X strictly, ties go to Y.
  const nn::Tensor<S>& ax = gate == Gate::variance ? g.value(var_x.id)
                                                   : g.value(mu_x.id);
  const nn::Tensor<S>& ay = gate == Gate::variance ? g.value(var_y.id)
                                                   : g.value(mu_y.id);
  auto mask = nn::Tensor<S>::zeros_like(ax);
  mask.data = (ax.data > ay.data).template cast<S>();
  auto inv_mask = nn::Tensor<S>::zeros_like(mask);
  inv_mask.data = S(1) - mask.data;

  auto vm = g.constant(mask);
  auto gated = nn::add(nn::mul(vm, ssim_x),
                       nn::mul(g.constant(std::move(inv_mask)), ssim_y));
  auto strided = stride > 1 ? nn::subsample2d(gated, stride) : gated;
  auto loss = nn::add_scalar(nn::scale(nn::mean_all(strided), S(-1)), S(1));

  auto mask_strided = stride > 1 ? nn::subsample2d(vm, stride) : vm;
  LossGraph<S> out;
  out.loss = loss;
  out.window_count = g.value(strided.id).size();
  out.frac_selected_x =
      static_cast<double>(g.value(mask_strided.id).data.mean());
  return out;
}

// Non-differentiable convenience wrappers, evaluated in double precision.
inline LossReport eval_window_loss(const img::Image& ix, const img::Image& iy,
                                   const img::Image& if_, Gate gate,
                                   const SsimParams& p = {}, int stride = 1) {
  nn::Graph<double> g(false);
  auto tx = img::to_tensor(ix).cast<double>();
  auto ty = img::to_tensor(iy).cast<double>();
  auto tf = img::to_tensor(if_).cast<double>();
  auto lg = build_window_ssim_loss<double>(g, g.constant(tf), tx, ty, gate,
                                           stride, p);
  return {g.value(lg.loss.id).data[0], lg.window_count, lg.frac_selected_x};
}

// Loss gated by window variance (larger-variance source wins each window).
inline LossReport loss_var_ssim(const img::Image& ix, const img::Image& iy,
                                const img::Image& if_, const SsimParams& p = {},
                                int stride = 1) {
  return eval_window_loss(ix, iy, if_, Gate::variance, p, stride);
}

// Ablation variant gated by window mean.
inline LossReport loss_mean_ssim(const img::Image& ix, const img::Image& iy,
                                 const img::Image& if_, const SsimParams& p = {},
                                 int stride = 1) {
  return eval_window_loss(ix, iy, if_, Gate::mean, p, stride);
}

// Scalar per-window helpers (double precision), shared by tests and tools.
inline double patch_variance(const Eigen::ArrayXXd& a) {
  const double mu = a.mean();
  return (a - mu).square().sum() / static_cast<double>(a.size());
}

inline double ssim_window(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b,
                          const SsimParams& p = {}) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("ssim_window: patch sizes differ");
  const double c1 = p.c1(), c2 = p.c2();
  const double ma = a.mean(), mb = b.mean();
  const double n = static_cast<double>(a.size());
  const double va = (a - ma).square().sum() / n;
  const double vb = (b - mb).square().sum() / n;
  const double cab = ((a - ma) * (b - mb)).sum() / n;
  return ((2 * ma * mb + c1) * (2 * cab + c2)) /
         ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

// Variance gate on three aligned windows: SSIM(wx, wf) iff
// var(wx) > var(wy), otherwise SSIM(wy, wf).
inline double var_ssim_window(const Eigen::ArrayXXd& wx, const Eigen::ArrayXXd& wy,
                              const Eigen::ArrayXXd& wf,
                              const SsimParams& p = {}) {
  return patch_variance(wx) > patch_variance(wy) ? ssim_window(wx, wf, p)
                                                 : ssim_window(wy, wf, p);
}

}  // namespace mapfuse::loss
