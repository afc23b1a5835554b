#pragma once

#include <map>
#include <string>

#include "mapfuse/params.hpp"

namespace mapfuse::train {

// Serialized network state: the full ordered parameter set plus a verbatim
// key=value echo of the training configuration. The echo round-trips
// byte-identically; helpers parse it when inference needs the topology.
struct Checkpoint {
  std::string config_echo;  // '\n'-separated key=value lines
  nn::NetworkParams<float> params;

  // Value for `key` in the echo, or "" when absent.
  std::string config_value(const std::string& key) const;
  // Network depth recorded in the echo; CompatError when absent or invalid.
  int depth() const;
};

std::map<std::string, std::string> parse_config_echo(const std::string& echo);

// Binary format: "MFNET" + version 0x01, u32 echo length + echo bytes,
// u32 tensor count, then per tensor u16 name length + name, u8 rank,
// u32 dims[rank], raw little-endian f32 data.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Throws IntegrityError (with the byte offset) for corrupt or truncated
// files and CompatError when the stored tensors do not match the parameter
// set implied by the echoed depth.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mapfuse::train
