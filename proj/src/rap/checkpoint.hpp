#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rap/nn.hpp"

namespace rap {

inline constexpr char kCheckpointMagic[4] = {'R', 'A', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "RAPC" u32 version
//   u32 count, then per tensor: u32 name_len, name, u32 rank, u64 extents[rank], f32 payload
//   optimizer: u64 step, u32 count, tensor records as above
//   rng: u32 len, text
//   config: u32 len, text
struct Checkpoint {
  NamedTensors<float> tensors;
  std::int64_t optimizer_step = 0;
  NamedTensors<float> optimizer;
  std::string rng_state;
  std::string config;

  std::string to_bytes() const;
  static Checkpoint from_bytes(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace rap
