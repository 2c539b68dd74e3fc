#pragma once

#include <string>

#include "tmpa/trainer.hpp"

namespace tmpa {

// Single-file binary checkpoint. Little-endian, magic "TMPA1", then
// length-prefixed named tensors: u32 name length, name bytes, u32 rank,
// u64 dims, raw 64-bit reals. Save/load round trips are bitwise lossless.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tmpa
