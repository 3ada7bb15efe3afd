#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnc/model.hpp"

namespace nnc {

/// CRC-32 (IEEE 802.3, reflected) of a byte range.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

/// Converts doubles to little-endian float32 bytes and back. All weights are
/// stored on disk at 32-bit precision; "bit-exact round trip" is defined at
/// that precision.
std::vector<std::uint8_t> to_f32_bytes(const std::vector<double>& v);
std::vector<double> from_f32_bytes(const std::uint8_t* bytes, std::size_t count);

/// Writes `<path_stem>.json` (manifest: layer list, shapes, hyperparameters,
/// per-tensor blob offsets and checksums) and `<path_stem>.bin` (one
/// little-endian float32 blob). Saving the same model twice produces
/// byte-identical files.
void save_model(const ModelGraph& model, const std::string& path_stem);

/// Loads a model saved by save_model. Accepts the stem or the .json path.
/// Throws IoError, MalformedManifest, UnknownVersion or ChecksumMismatch.
ModelGraph load_model(const std::string& path);

}  // namespace nnc
