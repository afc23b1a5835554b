#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mapfuse/image.hpp"

namespace mapfuse::img {

struct ImagePair {
  Image x;
  Image y;
  std::string id;
};

struct PairDataset {
  std::vector<ImagePair> pairs;
  Eigen::Index crop_size = 256;
};

// Pairs <dir_x>/*.{png,pgm} with <dir_y>/* by identical filename stem, sorted
// lexicographically by stem. Pairs whose images differ in size are rejected
// with an error naming the pair. Images smaller than `crop` are upscaled
// (nearest-neighbor) to the crop size at ingestion; inference never resizes.
PairDataset load_pair_dataset(const std::string& dir_x, const std::string& dir_y,
                              Eigen::Index crop);

// One shared crop window applied to both images of the pair.
ImagePair random_crop(const ImagePair& pair, Eigen::Index size,
                      std::mt19937_64& rng);

// FNV-1a over pair ids, dimensions, and quantized pixel bytes.
std::uint64_t dataset_hash(const PairDataset& ds);

// Pairs with x == y, cycling through several texture families. Used for
// reconstruction sanity runs.
PairDataset make_identical_texture_pairs(std::size_t n, Eigen::Index size,
                                         std::uint64_t seed);

// Pairs sharing scene geometry but rendered with modality-specific contrast
// and noise, standing in for a real infrared/visible corpus.
PairDataset make_synthetic_pairs(std::size_t n, Eigen::Index size,
                                 std::uint64_t seed);

}  // namespace mapfuse::img
