#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stairpool/unet.hpp"

namespace stairpool {

// Binary layout, all integers little-endian:
//   "SPK1", u16 version,
//   u32 length + model config text,
//   u32 parameter count, then per parameter:
//     u16 name length + name, u8 rank, rank x i64 extents, f64 values,
//   u8 momentum flag, then (if set) each parameter's f64 momentum buffer,
//   u32 CRC32 of every preceding byte.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const UNet& model, bool with_momentum = true);
// Throws BadMagic, CrcMismatch, VersionUnsupported, InvalidConfig,
// MissingParameter or ShapeMismatch.
UNet decode_checkpoint(const std::vector<std::uint8_t>& bytes);
// Loads into a model built from `expected` instead of the stored config, so
// layout differences surface as errors naming the first offending parameter.
UNet decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig& expected);

// Whole-file atomic write.
void save_checkpoint(const std::filesystem::path& path, const UNet& model, bool with_momentum = true);
UNet load_checkpoint(const std::filesystem::path& path);
UNet load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace stairpool
