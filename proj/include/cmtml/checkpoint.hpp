#pragma once

#include <filesystem>

#include "cmtml/trainer.hpp"

namespace cmtml {

inline constexpr const char* kCheckpointVersion = "CMTML-CKPT-1";

/// Single-file container:
///   "CMTML-CKPT-1\n"
///   u64 length + JSON metadata (config, input dims, epoch, RNG, Adam step)
///   u64 array count, then per array:
///     u32 name length, name, u8 dtype ('d' float64 / 'f' float32),
///     u64 rows, u64 cols, column-major data
/// Arrays are "param/<name>", "buffer/<name>", "adam_m/<name>", "adam_v/<name>".
/// Arrays are written as float64; float32 arrays are accepted on load.
void save_checkpoint(const std::filesystem::path& path, Trainer& trainer);

Trainer load_checkpoint(const std::filesystem::path& path);

}  // namespace cmtml
