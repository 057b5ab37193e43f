#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lgr/autodiff.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// LGRT encoding: "LGRT", u8 version (1), u8 dtype (0 f32, 1 f64), u8 ndim,
/// ndim little-endian u64 extents, row-major little-endian payload.
std::vector<std::uint8_t> encode_tensor(const Tensor& t, Dtype dtype = Dtype::f64);
/// Decodes one tensor starting at `pos` and advances it. Throws IoError on
/// bad magic, unknown version/dtype or truncation.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& pos, Dtype* dtype = nullptr);

void write_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype = Dtype::f64);
Tensor read_tensor(const std::filesystem::path& path, Dtype* dtype = nullptr);

/// LGRC checkpoint: "LGRC", u8 version (1), u32 entry count, then per entry
/// a u16 name length, the UTF-8 name and an embedded LGRT tensor.
void write_checkpoint(const std::filesystem::path& path, const NamedTensors& entries, Dtype dtype = Dtype::f64);
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Parameter values as named tensors.
NamedTensors export_parameters(const ParameterSet& params);
/// Copies every parameter from `entries` by name. Missing names or shape
/// differences throw ContractViolation; extra entries are ignored.
void import_parameters(ParameterSet& params, const NamedTensors& entries);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lgr
