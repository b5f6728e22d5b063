#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "maskwright/layers.hpp"

namespace maskwright {

inline constexpr char kModelMagic[4] = {'M', 'S', 'K', 'M'};
inline constexpr std::uint16_t kModelVersion = 1;

// Layout: magic, u16 version, u32 header length + header text (meta lines
// "#key=value" then one layer line each), u32 parameter count, then per
// parameter u32 name length + name, u8 trainable, u8 rank, u32 dims and the
// little-endian float64 payload; a CRC32 of everything before it closes the file.
std::vector<std::uint8_t> serialize_model(const ModelGraph& model);

// Throws FormatError (bad magic, malformed header), CorruptionError (CRC
// mismatch, truncation) or VersionError (newer format version).
ModelGraph deserialize_model(std::span<const std::uint8_t> bytes);

// Throws IoError when the file cannot be written or read.
void save_model(const std::filesystem::path& path, const ModelGraph& model);
ModelGraph load_model(const std::filesystem::path& path);

}  // namespace maskwright
