#pragma once

#include <filesystem>

#include "damformer/layers.hpp"

namespace damformer {

// DFW1 parameter checkpoint: magic "DFW1", little-endian u32 parameter count,
// then per parameter: u32 name length, UTF-8 name, u32 ndim, u32 dims, f32
// little-endian payload. Bit-exact round-trip for f32 parameters.
void save_checkpoint(const std::filesystem::path& path, const ParamList& params);

// Fills the given parameters from the file, matched by name. Missing, extra,
// or shape-mismatched entries raise a DataError listing every offender.
void load_checkpoint(const std::filesystem::path& path, ParamList& params);

}  // namespace damformer
