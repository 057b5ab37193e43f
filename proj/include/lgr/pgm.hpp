#pragma once

#include <filesystem>

#include "lgr/tensor.hpp"

namespace lgr {

/// Binary PGM (P5). Values are mapped to [0,1] by the file's maxval.
/// Throws IoError on malformed or truncated input.
Tensor read_pgm(const std::filesystem::path& path);
/// Raw integer samples, for label masks.
Tensor read_pgm_raw(const std::filesystem::path& path);

/// Writes an H x W tensor clamped to [0,1], with 8-bit (maxval 255) or
/// 16-bit big-endian (maxval 65535) samples.
void write_pgm(const std::filesystem::path& path, const Tensor& image, int bits = 8);
/// Writes integer samples verbatim with maxval 255.
void write_pgm_raw(const std::filesystem::path& path, const Tensor& labels);

}  // namespace lgr
