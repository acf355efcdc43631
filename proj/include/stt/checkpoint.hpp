#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stt/registry.hpp"

namespace stt {

// Binary checkpoint layout (all integers little-endian):
//   magic "CSPK", u32 version = 1, u32 tensor count,
//   per tensor: u16 name length, name bytes, u8 dtype (0 = f32), u8 rank,
//               u32 dims[rank], row-major f32 payload,
//   u32 config length, config text.
// Files are written to a temp path and renamed into place.
void save_checkpoint(const Registry& params, const std::string& config_text,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string config_text;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Copies loaded tensors into an already-built registry; the name sets and
// shapes must match exactly in both directions.
void restore_registry(Registry& params, const LoadedCheckpoint& ckpt);

// FNV-1a over every parameter's bytes in registration order.
uint64_t registry_hash(const Registry& params);

}  // namespace stt
