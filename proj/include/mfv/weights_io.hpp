#pragma once

#include <string>

#include "mfv/model.hpp"

namespace mfv {

// Binary weight container, magic "MFVW", version 1, little-endian throughout:
//   u32 version, u32 entry count, then per entry:
//   u32 name length, name bytes, u32 rank, rank x u64 extents,
//   u8 dtype (0 = float32), raw little-endian float32 payload.
// Writes go to a temp file renamed into place on success.
void save_weights(const std::string& path, const ModelWeights& weights);
ModelWeights load_weights(const std::string& path);

}  // namespace mfv
