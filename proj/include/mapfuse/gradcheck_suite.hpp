#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mapfuse/gradcheck.hpp"
#include "mapfuse/loss.hpp"
#include "mapfuse/model.hpp"

namespace mapfuse::nn {

struct SuiteCheck {
  std::string name;
  std::function<GradCheckReport(double tol, int samples, std::uint64_t seed)> run;
};

namespace detail {

// Deterministic fill in [lo, hi]; values at least `margin` from zero so
// finite differences never straddle an activation kink.
inline void fill_uniform(Tensor<double>& t, std::mt19937_64& rng, double lo,
                         double hi, double margin = 0.0) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double u = lo + (hi - lo) * ((rng() >> 11) * 0x1p-53);
    if (margin > 0 && std::abs(u) < margin) u = u < 0 ? -margin : margin;
    t.data[i] = u;
  }
}

// Random linear functional of `v`: breaks gradient symmetry so every entry
// is probed along an independent direction.
inline Var<double> pin(Graph<double>& g, Var<double> v, std::mt19937_64& rng) {
  auto r = Tensor<double>::zeros_like(g.value(v.id));
  fill_uniform(r, rng, 0.25, 1.75);
  return sum_all(mul(v, g.constant(std::move(r))));
}

using Builder = std::function<Var<double>(Graph<double>&, NetworkParams<double>&,
                                          std::mt19937_64&)>;

// Wraps a builder + parameter-shape recipe into a runnable check.
inline SuiteCheck make_check(
    std::string name,
    std::function<NetworkParams<double>(std::mt19937_64&)> make_params,
    Builder build) {
  SuiteCheck c;
  c.name = std::move(name);
  c.run = [make_params, build](double tol, int samples, std::uint64_t seed) {
    std::mt19937_64 prng(seed * 2654435761u + 17);
    auto params = make_params(prng);
    return grad_check(
        params,
        [&](Graph<double>& g, NetworkParams<double>& P) {
          std::mt19937_64 brng(seed * 40503u + 3);  // same pins every eval
          return build(g, P, brng);
        },
        tol, samples, 1e-4, seed);
  };
  return c;
}

inline NetworkParams<double> one_tensor(const char* name, Tensor<double> t) {
  NetworkParams<double> p;
  p.add(name, std::move(t));
  return p;
}

}  // namespace detail

// Finite-difference coverage of every differentiable building block plus the
// assembled network under each fusion rule and loss gate.
inline std::vector<SuiteCheck> standard_grad_checks() {
  using detail::fill_uniform;
  using detail::make_check;
  using detail::pin;
  std::vector<SuiteCheck> cs;

  auto img_params = [](Eigen::Index c, Eigen::Index h, Eigen::Index w,
                       double margin = 0.0) {
    return [=](std::mt19937_64& rng) {
      auto t = Tensor<double>::chw(c, h, w);
      fill_uniform(t, rng, -1.0, 1.0, margin);
      return detail::one_tensor("x", std::move(t));
    };
  };
  auto px = [](Graph<double>& g, NetworkParams<double>& P) {
    return g.param(P.at("x"));
  };

  cs.push_back(make_check(
      "conv3x3",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto x = Tensor<double>::chw(3, 8, 8);
        auto w = Tensor<double>::conv_weight(4, 3, 3, 3);
        auto b = Tensor<double>::vec(4);
        fill_uniform(x, rng, -1, 1);
        fill_uniform(w, rng, -0.5, 0.5);
        fill_uniform(b, rng, -0.2, 0.2);
        p.add("x", std::move(x));
        p.add("w", std::move(w));
        p.add("b", std::move(b));
        return p;
      },
      [](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g,
                   conv2d(g.param(P.at("x")), g.param(P.at("w")),
                          g.param(P.at("b"))),
                   rng);
      }));

  cs.push_back(make_check(
      "conv1x1",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto x = Tensor<double>::chw(3, 6, 6);
        auto w = Tensor<double>::conv_weight(5, 3, 1, 1);
        auto b = Tensor<double>::vec(5);
        fill_uniform(x, rng, -1, 1);
        fill_uniform(w, rng, -0.5, 0.5);
        fill_uniform(b, rng, -0.2, 0.2);
        p.add("x", std::move(x));
        p.add("w", std::move(w));
        p.add("b", std::move(b));
        return p;
      },
      [](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g,
                   conv2d(g.param(P.at("x")), g.param(P.at("w")),
                          g.param(P.at("b"))),
                   rng);
      }));

  cs.push_back(make_check(
      "leaky_relu", img_params(2, 8, 8, 0.01),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, leaky_relu(px(g, P), net::kLeakySlope), rng);
      }));

  cs.push_back(make_check(
      "sigmoid", img_params(2, 6, 6),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, sigmoid(px(g, P)), rng);
      }));

  cs.push_back(make_check(
      "downsample2x", img_params(2, 8, 8),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, downsample2x(px(g, P)), rng);
      }));

  cs.push_back(make_check(
      "upsample2x", img_params(2, 4, 4),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, upsample2x(px(g, P)), rng);
      }));

  auto two_params = [](Eigen::Index c, Eigen::Index h, Eigen::Index w, double blo,
                       double bhi) {
    return [=](std::mt19937_64& rng) {
      NetworkParams<double> p;
      auto a = Tensor<double>::chw(c, h, w);
      auto b = Tensor<double>::chw(c, h, w);
      fill_uniform(a, rng, -1, 1);
      fill_uniform(b, rng, blo, bhi);
      p.add("a", std::move(a));
      p.add("b", std::move(b));
      return p;
    };
  };
  auto pab = [](Graph<double>& g, NetworkParams<double>& P) {
    return std::pair{g.param(P.at("a")), g.param(P.at("b"))};
  };

  cs.push_back(make_check(
      "add", two_params(2, 5, 5, -1, 1),
      [pab](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        auto [a, b] = pab(g, P);
        return pin(g, add(a, b), rng);
      }));
  cs.push_back(make_check(
      "sub", two_params(2, 5, 5, -1, 1),
      [pab](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        auto [a, b] = pab(g, P);
        return pin(g, sub(a, b), rng);
      }));
  cs.push_back(make_check(
      "mul", two_params(2, 5, 5, -1, 1),
      [pab](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        auto [a, b] = pab(g, P);
        return pin(g, mul(a, b), rng);
      }));
  cs.push_back(make_check(
      "divide", two_params(2, 5, 5, 0.5, 1.5),
      [pab](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        auto [a, b] = pab(g, P);
        return pin(g, divide(a, b), rng);
      }));

  cs.push_back(make_check(
      "concat_channels",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto a = Tensor<double>::chw(2, 5, 5);
        auto b = Tensor<double>::chw(3, 5, 5);
        fill_uniform(a, rng, -1, 1);
        fill_uniform(b, rng, -1, 1);
        p.add("a", std::move(a));
        p.add("b", std::move(b));
        return p;
      },
      [](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(
            g, concat_channels<double>({g.param(P.at("a")), g.param(P.at("b"))}),
            rng);
      }));

  cs.push_back(make_check(
      "matmul",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto a = Tensor<double>::mat(6, 4);
        auto b = Tensor<double>::mat(4, 5);
        fill_uniform(a, rng, -1, 1);
        fill_uniform(b, rng, -1, 1);
        p.add("a", std::move(a));
        p.add("b", std::move(b));
        return p;
      },
      [](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, matmul(g.param(P.at("a")), g.param(P.at("b"))), rng);
      }));

  cs.push_back(make_check(
      "transpose",
      [](std::mt19937_64& rng) {
        auto a = Tensor<double>::mat(4, 6);
        fill_uniform(a, rng, -1, 1);
        return detail::one_tensor("x", std::move(a));
      },
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, transpose(px(g, P)), rng);
      }));

  cs.push_back(make_check(
      "softmax_rows",
      [](std::mt19937_64& rng) {
        auto a = Tensor<double>::mat(5, 7);
        fill_uniform(a, rng, -2, 2);
        return detail::one_tensor("x", std::move(a));
      },
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, softmax_rows(px(g, P)), rng);
      }));

  cs.push_back(make_check(
      "affine", img_params(2, 5, 5),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, scale(add_scalar(px(g, P), 0.3), 1.7), rng);
      }));

  cs.push_back(make_check(
      "box_mean", img_params(2, 12, 12),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, box_mean(px(g, P), 5), rng);
      }));

  cs.push_back(make_check(
      "subsample2d", img_params(1, 9, 9),
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, subsample2d(px(g, P), 3), rng);
      }));

  cs.push_back(make_check(
      "deep_maps",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto a = Tensor<double>::chw(3, 4, 4);
        auto b = Tensor<double>::chw(3, 4, 4);
        fill_uniform(a, rng, -1, 1);
        fill_uniform(b, rng, -1, 1);
        p.add("a", std::move(a));
        p.add("b", std::move(b));
        return p;
      },
      [](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        auto fx = g.param(P.at("a"));
        auto fy = g.param(P.at("b"));
        auto m = net::deep_maps(g, fx, fy);
        return pin(g, net::fuse_scale(fx, fy, m), rng);
      }));

  cs.push_back(make_check(
      "res_block",
      [](std::mt19937_64& rng) {
        NetworkParams<double> p;
        auto x = Tensor<double>::chw(4, 6, 6);
        fill_uniform(x, rng, -1, 1);
        p.add("x", std::move(x));
        auto add_conv = [&](const std::string& n, Eigen::Index out,
                            Eigen::Index in, Eigen::Index k) {
          auto w = Tensor<double>::conv_weight(out, in, k, k);
          auto b = Tensor<double>::vec(out);
          fill_uniform(w, rng, -0.4, 0.4);
          fill_uniform(b, rng, -0.1, 0.1);
          p.add(n + ".w", std::move(w));
          p.add(n + ".b", std::move(b));
        };
        add_conv("rb.c1", 6, 4, 3);
        add_conv("rb.c2", 6, 6, 3);
        add_conv("rb.proj", 6, 4, 1);
        return p;
      },
      [px](Graph<double>& g, NetworkParams<double>& P, std::mt19937_64& rng) {
        return pin(g, net::res_block(g, px(g, P), P, "rb"), rng);
      }));

  // Assembled 3-scale network + gated window loss on 16x16 inputs. Inputs are
  // fixed constants; every weight/bias tensor is probed.
  auto full_net = [](const char* name, const std::string& rule,
                     loss::Gate gate) {
    return make_check(
        name,
        [](std::mt19937_64& rng) { return net::build_params<double>(3, rng); },
        [rule, gate](Graph<double>& g, NetworkParams<double>& P,
                     std::mt19937_64& rng) {
          auto tx = Tensor<double>::chw(1, 16, 16);
          auto ty = Tensor<double>::chw(1, 16, 16);
          fill_uniform(tx, rng, 0.05, 0.95);
          fill_uniform(ty, rng, 0.05, 0.95);
          auto fused = net::forward_fused(g, tx, ty, P, {3, rule});
          return loss::build_window_ssim_loss<double>(g, fused, tx, ty, gate, 1)
              .loss;
        });
  };
  cs.push_back(full_net("net_mapping_var", "mapping", loss::Gate::variance));
  cs.push_back(full_net("net_mapping_mean", "mapping", loss::Gate::mean));
  cs.push_back(full_net("net_add_var", "add", loss::Gate::variance));
  cs.push_back(full_net("net_concat_var", "concat", loss::Gate::variance));

  return cs;
}

}  // namespace mapfuse::nn
