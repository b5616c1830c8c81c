// Model checkpoints.
//
// Binary layout, all integers little-endian:
//   "MDETCKPT"                       8-byte magic
//   u32 version                      currently 1
//   u64 n, n bytes                   model config as JSON
//   u64 count                        number of parameter blobs
//   per blob: u64 n, n bytes name; u32 rank; rank x u64 dims;
//             u64 numel; numel x f64 values
// A JSON sidecar (<path>.json) repeats the config and parameter count.
#pragma once

#include "mambadet/model.hpp"

#include <string>

namespace mambadet::checkpoint {

inline constexpr char kMagic[8] = {'M', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

std::string serialize(const model::Model& m);
model::Model deserialize(const std::string& bytes);

void save(const model::Model& m, const std::string& path);
model::Model load(const std::string& path);
std::string sidecar_path(const std::string& path);

}  // namespace mambadet::checkpoint
