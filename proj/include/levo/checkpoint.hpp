#pragma once

#include <cstdint>
#include <string>

#include "levo/tensor.hpp"

namespace levo {

// On-disk layout, all integers little-endian:
//   "LEVO" | u32 version | u64 entry count |
//   per entry: u32 name length | name bytes (UTF-8) | u32 rank |
//              rank x u64 dims | prod(dims) x f32 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParamStore& params, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

// In-memory variants used by tests and the C API.
std::string serialize_checkpoint(const ParamStore& params);
ParamStore deserialize_checkpoint(const std::string& bytes);

}  // namespace levo
