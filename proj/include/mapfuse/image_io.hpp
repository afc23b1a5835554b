#pragma once

#include <cstdint>
#include <string>

#include "mapfuse/image.hpp"

namespace mapfuse::img {

// Reads an 8-bit grayscale/RGB(A) PNG or a binary PGM (P5). RGB is reduced
// to luminance with Rec.601 weights; bytes are divided by the maximum code
// value into [0,1].
Image load_image(const std::string& path);

// Writes 8-bit grayscale, PGM when the path ends in .pgm, PNG otherwise.
// Quantization is round-half-up of v*255, clamped to [0,255].
void save_image(const Image& im, const std::string& path);

std::uint8_t quantize_byte(float v);

}  // namespace mapfuse::img
