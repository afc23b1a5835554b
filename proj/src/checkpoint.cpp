#include "mapfuse/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "mapfuse/common.hpp"
#include "mapfuse/model.hpp"

namespace mapfuse::train {

namespace {

constexpr char kMagic[5] = {'M', 'F', 'N', 'E', 'T'};
constexpr std::uint8_t kVersion = 0x01;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

// Byte-offset-tracking reader over the whole file image.
struct Cursor {
  const std::string& buf;
  std::size_t off = 0;

  void need(std::size_t n, const char* what) const {
    if (off + n > buf.size())
      throw IntegrityError("checkpoint truncated at byte offset " +
                           std::to_string(off) + " while reading " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[off++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(buf[off]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[off + 1])) << 8);
    off += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[off + i])) << (8 * i);
    off += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

}  // namespace

std::map<std::string, std::string> parse_config_echo(const std::string& echo) {
  std::map<std::string, std::string> kv;
  std::istringstream in(echo);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string Checkpoint::config_value(const std::string& key) const {
  const auto kv = parse_config_echo(config_echo);
  const auto it = kv.find(key);
  return it == kv.end() ? std::string() : it->second;
}

int Checkpoint::depth() const {
  const std::string v = config_value("depth");
  try {
    if (!v.empty()) return std::stoi(v);
  } catch (const std::exception&) {
  }
  throw CompatError("checkpoint config echo lacks a valid depth entry");
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.reserve(64 + ckpt.config_echo.size() +
              static_cast<std::size_t>(ckpt.params.scalar_count()) * 4);
  out.append(kMagic, sizeof(kMagic));
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(ckpt.config_echo.size()));
  out += ckpt.config_echo;
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    out.push_back(static_cast<char>(p.value.rank));
    for (int d = 0; d < p.value.rank; ++d)
      put_u32(out, static_cast<std::uint32_t>(p.value.dim[d]));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_f32(out, p.value.data[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Cursor c{buf};
  const std::string magic = c.bytes(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("bad checkpoint magic at byte offset 0");
  if (c.u8("version") != kVersion)
    throw IntegrityError("unsupported checkpoint version at byte offset 5");

  Checkpoint ckpt;
  const std::uint32_t echo_len = c.u32("config echo length");
  ckpt.config_echo = c.bytes(echo_len, "config echo");

  const std::uint32_t count = c.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t rec_off = c.off;
    const std::uint16_t name_len = c.u16("tensor name length");
    const std::string name = c.bytes(name_len, "tensor name");
    const int rank = c.u8("tensor rank");
    if (rank < 1 || rank > 4)
      throw IntegrityError("invalid tensor rank at byte offset " +
                           std::to_string(rec_off));
    std::array<Eigen::Index, 4> dim{0, 0, 0, 0};
    Eigen::Index n = 1;
    for (int d = 0; d < rank; ++d) {
      dim[d] = static_cast<Eigen::Index>(c.u32("tensor dims"));
      if (dim[d] < 1)
        throw IntegrityError("invalid tensor dimension at byte offset " +
                             std::to_string(rec_off));
      n *= dim[d];
    }
    nn::Tensor<float> value;
    value.rank = rank;
    value.dim = dim;
    value.data.resize(n);
    c.need(static_cast<std::size_t>(n) * 4, "tensor data");
    for (Eigen::Index i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[c.off + b]))
                << (8 * b);
      c.off += 4;
      float fv;
      std::memcpy(&fv, &bits, 4);
      value.data[i] = fv;
    }
    if (ckpt.params.contains(name))
      throw IntegrityError("duplicate tensor name '" + name +
                           "' at byte offset " + std::to_string(rec_off));
    ckpt.params.add(name, std::move(value));
  }
  if (c.off != buf.size())
    throw IntegrityError("trailing bytes after checkpoint payload at byte offset " +
                         std::to_string(c.off));

  // Cross-check the tensor set against the topology the echo claims.
  const int depth = ckpt.depth();
  net::validate_model_config({depth, "mapping"});
  std::mt19937_64 rng(0);
  const auto expected = net::build_params<float>(depth, rng);
  std::string problems;
  auto note = [&](const std::string& p) {
    if (!problems.empty()) problems += "; ";
    problems += p;
  };
  for (const auto& p : expected) {
    if (!ckpt.params.contains(p.name)) {
      note("missing " + p.name);
      continue;
    }
    const auto& got = ckpt.params.at(p.name).value;
    if (got.rank != p.value.rank || got.dim != p.value.dim)
      note(p.name + " has shape " + got.shape_str() + ", expected " +
           p.value.shape_str());
  }
  for (const auto& p : ckpt.params)
    if (!expected.contains(p.name)) note("unexpected " + p.name);
  if (!problems.empty())
    throw CompatError("checkpoint incompatible with depth " +
                      std::to_string(depth) + " network: " + problems);
  return ckpt;
}

}  // namespace mapfuse::train
