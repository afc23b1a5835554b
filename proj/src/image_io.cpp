#include "mapfuse/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "mapfuse/common.hpp"

namespace mapfuse::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

bool ends_with_nocase(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  for (std::size_t i = 0; i < suf.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(s[s.size() - suf.size() + i])) !=
        std::tolower(static_cast<unsigned char>(suf[i])))
      return false;
  return true;
}

float luma601(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

// --- PGM (P5) ---------------------------------------------------------------

int pgm_next_token(std::FILE* f, char* buf, int cap) {
  int c;
  // skip whitespace and '#' comments
  while ((c = std::fgetc(f)) != EOF) {
    if (c == '#') {
      while ((c = std::fgetc(f)) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) return 0;
  int n = 0;
  do {
    if (n + 1 < cap) buf[n++] = static_cast<char>(c);
    c = std::fgetc(f);
  } while (c != EOF && !std::isspace(c));
  buf[n] = '\0';
  return n;
}

Image load_pgm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  char tok[64];
  if (!pgm_next_token(f.get(), tok, sizeof tok) || std::strcmp(tok, "P5") != 0)
    throw FormatError(path + ": not a binary PGM (P5)");
  long dims[3];
  for (int i = 0; i < 3; ++i) {
    if (!pgm_next_token(f.get(), tok, sizeof tok))
      throw FormatError(path + ": truncated PGM header");
    char* end = nullptr;
    dims[i] = std::strtol(tok, &end, 10);
    if (end == tok || dims[i] <= 0)
      throw FormatError(path + ": bad PGM header field '" + tok + "'");
  }
  const long w = dims[0], h = dims[1], maxval = dims[2];
  if (maxval > 255)
    throw FormatError(path + ": PGM maxval " + std::to_string(maxval) +
                      " unsupported (only 8-bit)");
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  Image im(h, w);
  for (long i = 0; i < h; ++i) {
    if (std::fread(row.data(), 1, row.size(), f.get()) != row.size())
      throw FormatError(path + ": truncated PGM pixel data");
    for (long j = 0; j < w; ++j)
      im.pix(i, j) = static_cast<float>(row[j]) / static_cast<float>(maxval);
  }
  return im;
}

void save_pgm(const Image& im, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  std::fprintf(f.get(), "P5\n%ld %ld\n255\n", static_cast<long>(im.width()),
               static_cast<long>(im.height()));
  std::vector<std::uint8_t> row(static_cast<std::size_t>(im.width()));
  for (Eigen::Index i = 0; i < im.height(); ++i) {
    for (Eigen::Index j = 0; j < im.width(); ++j)
      row[static_cast<std::size_t>(j)] = quantize_byte(im.pix(i, j));
    if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
      throw IoError("short write to " + path);
  }
  if (std::fflush(f.get()) != 0) throw IoError("flush failed for " + path);
}

// --- PNG ---------------------------------------------------------------------

Image load_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw FormatError(path + ": not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng: failed to create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("libpng: failed to create info struct");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": corrupt PNG data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": palette PNG unsupported (8-bit gray or RGB only)");
  }
  if (depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": 16-bit PNG unsupported (8-bit gray or RGB only)");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const png_size_t rowbytes = png_get_rowbytes(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": unsupported PNG channel layout");
  }

  pixels.resize(static_cast<std::size_t>(rowbytes) * h);
  row_ptrs.resize(h);
  for (png_uint_32 i = 0; i < h; ++i)
    row_ptrs[i] = pixels.data() + static_cast<std::size_t>(rowbytes) * i;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image im(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  for (png_uint_32 i = 0; i < h; ++i) {
    const png_byte* row = pixels.data() + static_cast<std::size_t>(rowbytes) * i;
    for (png_uint_32 j = 0; j < w; ++j) {
      float v;
      if (channels == 1) {
        v = static_cast<float>(row[j]) / 255.0f;
      } else {
        v = luma601(row[3 * j] / 255.0f, row[3 * j + 1] / 255.0f,
                    row[3 * j + 2] / 255.0f);
      }
      im.pix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return im;
}

void save_png(const Image& im, const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("libpng: failed to create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("libpng: failed to create info struct");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: write failed for " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(im.width()),
               static_cast<png_uint_32>(im.height()), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(im.width()));
  for (Eigen::Index i = 0; i < im.height(); ++i) {
    for (Eigen::Index j = 0; j < im.width(); ++j)
      row[static_cast<std::size_t>(j)] = quantize_byte(im.pix(i, j));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::uint8_t quantize_byte(float v) {
  const long q = std::lround(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0L, 255L));
}

Image load_image(const std::string& path) {
  if (ends_with_nocase(path, ".pgm") || ends_with_nocase(path, ".pnm"))
    return load_pgm(path);
  if (ends_with_nocase(path, ".png")) return load_png(path);
  // sniff by magic for extensionless paths
  {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    unsigned char sig[2] = {0, 0};
    if (std::fread(sig, 1, 2, f.get()) == 2 && sig[0] == 'P' && sig[1] == '5')
      return load_pgm(path);
  }
  return load_png(path);
}

void save_image(const Image& im, const std::string& path) {
  if (im.empty()) throw ShapeError("save_image: empty image");
  if (ends_with_nocase(path, ".pgm") || ends_with_nocase(path, ".pnm"))
    save_pgm(im, path);
  else
    save_png(im, path);
}

}  // namespace mapfuse::img
