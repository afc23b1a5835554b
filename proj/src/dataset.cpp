#include "mapfuse/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <map>

#include "mapfuse/common.hpp"
#include "mapfuse/image_io.hpp"

namespace fs = std::filesystem;

namespace mapfuse::img {

namespace {

bool supported_ext(std::string ext) {
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".pnm";
}

std::map<std::string, fs::path> stems_in(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path p = e.path();
    if (!supported_ext(p.extension().string())) continue;
    out[p.stem().string()] = p;
  }
  return out;
}

// Non-cryptographic draw; kept explicit so sampling is reproducible
// independent of standard-library distribution internals.
Eigen::Index draw_below(std::mt19937_64& rng, Eigen::Index n) {
  return static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
}

void fnv1a(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

PairDataset load_pair_dataset(const std::string& dir_x, const std::string& dir_y,
                              Eigen::Index crop) {
  const auto sx = stems_in(dir_x);
  const auto sy = stems_in(dir_y);
  PairDataset ds;
  ds.crop_size = crop;
  for (const auto& [stem, px] : sx) {
    auto it = sy.find(stem);
    if (it == sy.end()) continue;
    ImagePair pair;
    pair.id = stem;
    pair.x = load_image(px.string());
    pair.y = load_image(it->second.string());
    if (pair.x.height() != pair.y.height() || pair.x.width() != pair.y.width())
      throw ShapeError("pair '" + stem + "': dimensions differ, " +
                       std::to_string(pair.x.height()) + "x" +
                       std::to_string(pair.x.width()) + " vs " +
                       std::to_string(pair.y.height()) + "x" +
                       std::to_string(pair.y.width()));
    if (pair.x.height() < crop || pair.x.width() < crop) {
      const Eigen::Index h = std::max(crop, pair.x.height());
      const Eigen::Index w = std::max(crop, pair.x.width());
      pair.x = resize_nearest(pair.x, h, w);
      pair.y = resize_nearest(pair.y, h, w);
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (ds.pairs.empty())
    throw ConfigError("no matched image pairs between " + dir_x + " and " + dir_y);
  // std::map iteration is already stem-sorted; keep the contract explicit.
  std::sort(ds.pairs.begin(), ds.pairs.end(),
            [](const ImagePair& a, const ImagePair& b) { return a.id < b.id; });
  return ds;
}

ImagePair random_crop(const ImagePair& pair, Eigen::Index size,
                      std::mt19937_64& rng) {
  const Eigen::Index H = pair.x.height(), W = pair.x.width();
  if (H < size || W < size)
    throw ShapeError("random_crop: pair '" + pair.id + "' is " +
                     std::to_string(H) + "x" + std::to_string(W) +
                     ", smaller than crop " + std::to_string(size));
  const Eigen::Index top = draw_below(rng, H - size + 1);
  const Eigen::Index left = draw_below(rng, W - size + 1);
  ImagePair out;
  out.id = pair.id;
  out.x = crop(pair.x, top, left, size, size);
  out.y = crop(pair.y, top, left, size, size);
  return out;
}

std::uint64_t dataset_hash(const PairDataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : ds.pairs) {
    fnv1a(h, p.id.data(), p.id.size());
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(p.x.height()),
                                   static_cast<std::uint32_t>(p.x.width())};
    fnv1a(h, dims, sizeof dims);
    for (const Image* im : {&p.x, &p.y})
      for (Eigen::Index i = 0; i < im->height(); ++i)
        for (Eigen::Index j = 0; j < im->width(); ++j) {
          const std::uint8_t b = quantize_byte(im->pix(i, j));
          fnv1a(h, &b, 1);
        }
  }
  return h;
}

namespace {

float unit_draw(std::mt19937_64& rng) {
  return static_cast<float>(rng() >> 11) * (1.0f / 9007199254740992.0f);
}

Image texture_image(std::size_t kind, Eigen::Index size, std::mt19937_64& rng) {
  Image im(size, size);
  switch (kind % 4) {
    case 0: {  // checkerboard
      const Eigen::Index p = 2 + static_cast<Eigen::Index>(rng() % 7);
      const float lo = 0.1f + 0.2f * unit_draw(rng);
      const float hi = 0.7f + 0.25f * unit_draw(rng);
      for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index j = 0; j < size; ++j)
          im.pix(i, j) = ((i / p + j / p) % 2) ? hi : lo;
      break;
    }
    case 1: {  // oriented sinusoid over a gradient
      const float fx = 1.0f + 6.0f * unit_draw(rng);
      const float fy = 1.0f + 6.0f * unit_draw(rng);
      const float ph = 6.2831853f * unit_draw(rng);
      for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index j = 0; j < size; ++j) {
          const float u = static_cast<float>(i) / static_cast<float>(size);
          const float v = static_cast<float>(j) / static_cast<float>(size);
          im.pix(i, j) = 0.5f + 0.3f * std::sin(6.2831853f * (fx * u + fy * v) + ph) +
                         0.15f * (u - 0.5f);
        }
      break;
    }
    case 2: {  // bright blobs on a dark ramp
      const int nb = 3 + static_cast<int>(rng() % 4);
      std::vector<float> cx(nb), cy(nb), s2(nb), amp(nb);
      for (int b = 0; b < nb; ++b) {
        cx[b] = unit_draw(rng) * size;
        cy[b] = unit_draw(rng) * size;
        const float s = (0.05f + 0.15f * unit_draw(rng)) * size;
        s2[b] = 2.0f * s * s;
        amp[b] = 0.4f + 0.5f * unit_draw(rng);
      }
      for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index j = 0; j < size; ++j) {
          float v = 0.1f + 0.1f * static_cast<float>(j) / static_cast<float>(size);
          for (int b = 0; b < nb; ++b) {
            const float dx = static_cast<float>(i) - cx[b];
            const float dy = static_cast<float>(j) - cy[b];
            v += amp[b] * std::exp(-(dx * dx + dy * dy) / s2[b]);
          }
          im.pix(i, j) = v;
        }
      break;
    }
    default: {  // diagonal stripes with a step
      const Eigen::Index p = 3 + static_cast<Eigen::Index>(rng() % 6);
      const Eigen::Index step_at = size / 3 + static_cast<Eigen::Index>(rng() % (size / 3));
      for (Eigen::Index i = 0; i < size; ++i)
        for (Eigen::Index j = 0; j < size; ++j) {
          float v = 0.25f + 0.5f * (((i + j) / p) % 2);
          if (j > step_at) v = std::min(1.0f, v + 0.2f);
          im.pix(i, j) = v;
        }
      break;
    }
  }
  im.pix = im.pix.cwiseMax(0.0f).cwiseMin(1.0f);
  return im;
}

}  // namespace

PairDataset make_identical_texture_pairs(std::size_t n, Eigen::Index size,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PairDataset ds;
  ds.crop_size = size;
  for (std::size_t i = 0; i < n; ++i) {
    ImagePair p;
    p.id = "tex" + std::to_string(i);
    p.x = texture_image(i, size, rng);
    p.y = p.x;
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

PairDataset make_synthetic_pairs(std::size_t n, Eigen::Index size,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PairDataset ds;
  ds.crop_size = size;
  for (std::size_t i = 0; i < n; ++i) {
    Image base = texture_image(i, size, rng);
    ImagePair p;
    p.id = "syn" + std::to_string(i);
    p.x = Image(size, size);
    p.y = Image(size, size);
    // x: compressed bright-object contrast; y: full detail plus mild noise
    for (Eigen::Index r = 0; r < size; ++r)
      for (Eigen::Index c = 0; c < size; ++c) {
        const float b = base.pix(r, c);
        p.x.pix(r, c) = std::clamp(0.15f + 0.7f * b * b, 0.0f, 1.0f);
        p.y.pix(r, c) =
            std::clamp(0.1f + 0.8f * b + 0.03f * (unit_draw(rng) - 0.5f), 0.0f, 1.0f);
      }
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace mapfuse::img
