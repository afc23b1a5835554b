#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <string>

#include "mapfuse/common.hpp"
#include "mapfuse/tensor.hpp"

namespace mapfuse::img {

using PlaneF = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Single-channel raster with intensities in [0,1].
struct Image {
  PlaneF pix;

  Image() = default;
  explicit Image(PlaneF p) : pix(std::move(p)) {}
  Image(Eigen::Index h, Eigen::Index w) : pix(PlaneF::Zero(h, w)) {}

  Eigen::Index height() const { return pix.rows(); }
  Eigen::Index width() const { return pix.cols(); }
  bool empty() const { return pix.size() == 0; }
};

inline Image crop(const Image& im, Eigen::Index top, Eigen::Index left,
                  Eigen::Index h, Eigen::Index w) {
  if (top < 0 || left < 0 || top + h > im.height() || left + w > im.width())
    throw ShapeError("crop: window " + std::to_string(h) + "x" +
                     std::to_string(w) + "+" + std::to_string(top) + "+" +
                     std::to_string(left) + " exceeds image " +
                     std::to_string(im.height()) + "x" +
                     std::to_string(im.width()));
  return Image(PlaneF(im.pix.block(top, left, h, w)));
}

inline Image resize_nearest(const Image& im, Eigen::Index h, Eigen::Index w) {
  if (im.empty() || h < 1 || w < 1)
    throw ShapeError("resize_nearest: empty image or non-positive size");
  PlaneF out(h, w);
  for (Eigen::Index i = 0; i < h; ++i) {
    const Eigen::Index si = std::min(im.height() - 1, i * im.height() / h);
    for (Eigen::Index j = 0; j < w; ++j) {
      const Eigen::Index sj = std::min(im.width() - 1, j * im.width() / w);
      out(i, j) = im.pix(si, sj);
    }
  }
  return Image(std::move(out));
}

struct Padded {
  Image image;
  Eigen::Index orig_h = 0;
  Eigen::Index orig_w = 0;
};

// Reflect-101 pad on the bottom/right edges up to the next multiple.
// crop(pad(img)) == img exactly.
inline Padded pad_to_multiple(const Image& im, Eigen::Index multiple) {
  if (multiple < 1) throw ConfigError("pad_to_multiple: multiple must be >= 1");
  const Eigen::Index H = im.height(), W = im.width();
  const Eigen::Index Hp = ((H + multiple - 1) / multiple) * multiple;
  const Eigen::Index Wp = ((W + multiple - 1) / multiple) * multiple;
  if (Hp == H && Wp == W) return {im, H, W};
  PlaneF out(Hp, Wp);
  auto fold = [](Eigen::Index q, Eigen::Index n) {
    while (q < 0 || q >= n) {
      if (q < 0) q = -q;
      if (q >= n) q = 2 * n - 2 - q;
    }
    return q;
  };
  for (Eigen::Index i = 0; i < Hp; ++i) {
    const Eigen::Index si = fold(i, H);
    for (Eigen::Index j = 0; j < Wp; ++j) out(i, j) = im.pix(si, fold(j, W));
  }
  return {Image(std::move(out)), H, W};
}

inline nn::Tensor<float> to_tensor(const Image& im) {
  auto t = nn::Tensor<float>::chw(1, im.height(), im.width());
  t.channel(0) = im.pix.matrix();
  return t;
}

// (1,H,W) tensor back to an image, clamped into [0,1].
inline Image to_image(const nn::Tensor<float>& t) {
  if (t.rank != 3 || t.dim[0] != 1)
    throw ShapeError("to_image: expected a (1,H,W) tensor, got " + t.shape_str());
  PlaneF p(t.dim[1], t.dim[2]);
  p.matrix() = t.channel(0);
  p = p.cwiseMax(0.0f).cwiseMin(1.0f);
  return Image(std::move(p));
}

}  // namespace mapfuse::img
