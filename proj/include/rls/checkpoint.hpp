#pragma once

// RLSW weight checkpoint.
//
// Layout (little-endian):
//   "RLSW"  u32 version(=1)
//   u32 image_size  u32 kernel  u32 K  u32 N
//   u32 decoder_hidden  u32 classifier_hidden  u32 classes
//   u32 stages  u32 channels[stages]
//   u32 section_count
//   per section: u32 name_len  name bytes  u32 rank  u32 dims[rank]  f64 data[prod(dims)]

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rls/networks.hpp"
#include "rls/tensor.hpp"

namespace rls::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nets::NetworkSpec spec;
  std::vector<std::pair<std::string, Tensor>> sections;

  bool has(const std::string& name) const;
  // Throws FormatError(malformed) when absent.
  const Tensor& section(const std::string& name) const;
  void put(const std::string& name, Tensor value);
  void put(const nets::ConstParamList& params);
  // Copies matching sections into params; every name must exist with the same shape.
  void load_into(const nets::ParamList& params) const;
};

std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace rls::io
