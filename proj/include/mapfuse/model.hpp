#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mapfuse/graph.hpp"

namespace mapfuse::net {

// Slope of every leaky-ReLU in the network.
constexpr double kLeakySlope = 0.01;

struct ModelConfig {
  int depth = 3;                        // pyramid scales: stem + depth-1 res blocks
  std::string fusion_rule = "mapping";  // add | concat | mapping
};

inline Eigen::Index scale_channels(int k) { return Eigen::Index(16) << k; }

inline void validate_model_config(const ModelConfig& c) {
  if (c.depth < 3 || c.depth > 5)
    throw ConfigError("depth must be 3, 4, or 5, got " + std::to_string(c.depth));
  if (c.fusion_rule != "add" && c.fusion_rule != "concat" &&
      c.fusion_rule != "mapping")
    throw ConfigError("unknown fusion rule '" + c.fusion_rule +
                      "' (valid: add, concat, mapping)");
}

// Full parameter set for a given depth, in the canonical (checkpoint) order.
// The set covers every fusion rule so the layout depends on depth alone.
template <typename S>
nn::NetworkParams<S> build_params(int depth, std::mt19937_64& rng) {
  validate_model_config({depth, "mapping"});
  nn::NetworkParams<S> P;
  auto add_conv = [&](const std::string& name, Eigen::Index out, Eigen::Index in,
                      Eigen::Index k) {
    auto w = nn::Tensor<S>::conv_weight(out, in, k, k);
    nn::init_conv_weight(w, rng, kLeakySlope);
    P.add(name + ".w", std::move(w));
    P.add(name + ".b", nn::Tensor<S>::vec(out));
  };
  for (const char* br : {"enc_x", "enc_y"}) {
    add_conv(std::string(br) + ".stem", scale_channels(0), 1, 3);
    for (int k = 1; k < depth; ++k) {
      const std::string rb = std::string(br) + ".rb" + std::to_string(k);
      add_conv(rb + ".c1", scale_channels(k), scale_channels(k - 1), 3);
      add_conv(rb + ".c2", scale_channels(k), scale_channels(k), 3);
      add_conv(rb + ".proj", scale_channels(k), scale_channels(k - 1), 1);
    }
  }
  for (int k = 0; k < depth - 1; ++k) {
    Eigen::Index in = 0;
    for (int j = k + 1; j < depth; ++j) in += scale_channels(j);
    add_conv("fus.map" + std::to_string(k) + ".x", scale_channels(k), in, 3);
    add_conv("fus.map" + std::to_string(k) + ".y", scale_channels(k), in, 3);
  }
  for (int k = 0; k < depth; ++k)
    add_conv("fus.cat" + std::to_string(k), scale_channels(k),
             2 * scale_channels(k), 1);
  for (int k = depth - 2; k >= 0; --k)
    add_conv("dec.u" + std::to_string(k), scale_channels(k),
             scale_channels(k + 1) + scale_channels(k), 3);
  add_conv("dec.out", 1, scale_channels(0), 3);
  return P;
}

template <typename S>
nn::Var<S> conv_p(nn::Graph<S>& g, nn::Var<S> x, nn::NetworkParams<S>& P,
                  const std::string& name) {
  return nn::conv2d(x, g.param(P.at(name + ".w")), g.param(P.at(name + ".b")));
}

// conv -> lrelu -> conv plus a skip (1x1-projected when channels change),
// lrelu after the addition.
template <typename S>
nn::Var<S> res_block(nn::Graph<S>& g, nn::Var<S> x, nn::NetworkParams<S>& P,
                     const std::string& prefix) {
  const S slope = S(kLeakySlope);
  auto h = nn::leaky_relu(conv_p(g, x, P, prefix + ".c1"), slope);
  h = conv_p(g, h, P, prefix + ".c2");
  const Eigen::Index cin = g.value(x.id).dim[0];
  const Eigen::Index cout = g.value(h.id).dim[0];
  nn::Var<S> skip = x;
  if (cin != cout) {
    if (!P.contains(prefix + ".proj.w"))
      throw ConfigError("res block '" + prefix + "' maps " + std::to_string(cin) +
                        " to " + std::to_string(cout) +
                        " channels but has no 1x1 projection");
    skip = conv_p(g, x, P, prefix + ".proj");
  }
  return nn::leaky_relu(nn::add(h, skip), slope);
}

// One branch: stem conv (+activation) at full resolution, then a 2x2
// average-pool followed by a res block per additional scale.
template <typename S>
std::vector<nn::Var<S>> encode(nn::Graph<S>& g, const nn::Tensor<S>& image,
                               nn::NetworkParams<S>& P, const std::string& branch,
                               int depth) {
  if (image.rank != 3 || image.dim[0] != 1)
    throw ShapeError("encode: expected a (1,H,W) tensor, got " + image.shape_str());
  const Eigen::Index mult = Eigen::Index(1) << (depth - 1);
  if (image.dim[1] % mult != 0 || image.dim[2] % mult != 0)
    throw ShapeError("encode: dims " + image.shape_str() +
                     " not divisible by " + std::to_string(mult) +
                     "; pad_to_multiple first");
  const S slope = S(kLeakySlope);
  std::vector<nn::Var<S>> pyr;
  pyr.push_back(nn::leaky_relu(conv_p(g, g.constant(image), P, branch + ".stem"),
                               slope));
  for (int k = 1; k < depth; ++k)
    pyr.push_back(res_block(g, nn::downsample2x(pyr.back()), P,
                            branch + ".rb" + std::to_string(k)));
  return pyr;
}

template <typename S>
struct AttentionMaps {
  nn::Var<S> x;
  nn::Var<S> y;
};

// Cross-feature maps at one scale: Q = flatten(f_x), K = flatten(f_y),
// P = row-softmax(Q K^T / sqrt(C)), map_x = P Q, map_y = P K.
template <typename S>
AttentionMaps<S> deep_maps(nn::Graph<S>& g, nn::Var<S> fx, nn::Var<S> fy) {
  const auto& X = g.value(fx.id);
  const auto& Y = g.value(fy.id);
  nn::check_same_shape("deep_maps", X.rank, X.dim, Y.rank, Y.dim);
  const Eigen::Index C = X.dim[0], h = X.dim[1], w = X.dim[2];
  auto Q = nn::flatten_spatial(fx);
  auto K = nn::flatten_spatial(fy);
  auto A = nn::scale(nn::matmul(Q, nn::transpose(K)),
                     S(1) / std::sqrt(static_cast<S>(C)));
  auto P = nn::softmax_rows(A);
  return {nn::unflatten_spatial(nn::matmul(P, Q), C, h, w),
          nn::unflatten_spatial(nn::matmul(P, K), C, h, w)};
}

// fuse = map_x (.) f_x + map_y (.) f_y
template <typename S>
nn::Var<S> fuse_scale(nn::Var<S> fx, nn::Var<S> fy, const AttentionMaps<S>& m) {
  return nn::add(nn::mul(m.x, fx), nn::mul(m.y, fy));
}

// Per-scale fusion. "add": plain sum. "concat": channel concat + learned 1x1
// back to the scale width. "mapping": deep maps at the deepest scale; each
// shallower scale gets every deeper scale's maps upsampled, concatenated
// (nearest-deeper first) and projected by a learned 3x3 conv, then the same
// elementwise combination as the deepest scale.
template <typename S>
std::vector<nn::Var<S>> fuse_pyramids(nn::Graph<S>& g,
                                      const std::vector<nn::Var<S>>& px,
                                      const std::vector<nn::Var<S>>& py,
                                      nn::NetworkParams<S>& P,
                                      const std::string& rule) {
  if (rule != "add" && rule != "concat" && rule != "mapping")
    throw ConfigError("unknown fusion rule '" + rule +
                      "' (valid: add, concat, mapping)");
  if (px.size() != py.size())
    throw ShapeError("fuse_pyramids: pyramid scale counts differ");
  const int nsc = static_cast<int>(px.size());
  std::vector<nn::Var<S>> fused(nsc);
  if (rule == "add") {
    for (int k = 0; k < nsc; ++k) fused[k] = nn::add(px[k], py[k]);
    return fused;
  }
  if (rule == "concat") {
    for (int k = 0; k < nsc; ++k)
      fused[k] = conv_p(g, nn::concat_channels<S>({px[k], py[k]}), P,
                        "fus.cat" + std::to_string(k));
    return fused;
  }
  std::vector<AttentionMaps<S>> maps(nsc);
  maps[nsc - 1] = deep_maps(g, px[nsc - 1], py[nsc - 1]);
  for (int k = nsc - 2; k >= 0; --k) {
    std::vector<nn::Var<S>> ux, uy;
    for (int j = k + 1; j < nsc; ++j) {
      nn::Var<S> mx = maps[j].x, my = maps[j].y;
      for (int t = 0; t < j - k; ++t) {
        mx = nn::upsample2x(mx);
        my = nn::upsample2x(my);
      }
      ux.push_back(mx);
      uy.push_back(my);
    }
    maps[k] = {conv_p(g, nn::concat_channels(ux), P,
                      "fus.map" + std::to_string(k) + ".x"),
               conv_p(g, nn::concat_channels(uy), P,
                      "fus.map" + std::to_string(k) + ".y")};
  }
  for (int k = 0; k < nsc; ++k) fused[k] = fuse_scale(px[k], py[k], maps[k]);
  return fused;
}

// Deep-to-shallow aggregation: upsample, concat with the scale's fused
// features, 3x3 conv + lrelu; final 3x3 conv + sigmoid to one channel.
template <typename S>
nn::Var<S> decode(nn::Graph<S>& g, const std::vector<nn::Var<S>>& fused,
                  nn::NetworkParams<S>& P) {
  const S slope = S(kLeakySlope);
  nn::Var<S> d = fused.back();
  for (int k = static_cast<int>(fused.size()) - 2; k >= 0; --k)
    d = nn::leaky_relu(
        conv_p(g, nn::concat_channels<S>({nn::upsample2x(d), fused[k]}), P,
               "dec.u" + std::to_string(k)),
        slope);
  return nn::sigmoid(conv_p(g, d, P, "dec.out"));
}

template <typename S>
nn::Var<S> forward_fused(nn::Graph<S>& g, const nn::Tensor<S>& ix,
                         const nn::Tensor<S>& iy, nn::NetworkParams<S>& P,
                         const ModelConfig& cfg) {
  validate_model_config(cfg);
  nn::check_same_shape("forward_fused", ix.rank, ix.dim, iy.rank, iy.dim);
  auto px = encode(g, ix, P, "enc_x", cfg.depth);
  auto py = encode(g, iy, P, "enc_y", cfg.depth);
  auto fused = fuse_pyramids(g, px, py, P, cfg.fusion_rule);
  return decode(g, fused, P);
}

}  // namespace mapfuse::net
