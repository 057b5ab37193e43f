#include "lgr/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "lgr/errors.hpp"

namespace lgr {

namespace {

constexpr std::uint8_t kVersion = 1;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U u = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <class T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  if (in.size() - pos < sizeof(T) || pos > in.size()) throw IoError(std::string("truncated ") + what);
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(in[pos + i]) << (8 * i));
  pos += sizeof(T);
  return std::bit_cast<T>(u);
}

std::uint8_t get_u8(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  if (pos >= in.size()) throw IoError(std::string("truncated ") + what);
  return in[pos++];
}

void expect_magic(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* magic) {
  if (in.size() < pos + 4 || std::memcmp(in.data() + pos, magic, 4) != 0) {
    throw IoError(std::string("missing ") + magic + " magic");
  }
  pos += 4;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, Dtype dtype) {
  std::vector<std::uint8_t> out{'L', 'G', 'R', 'T', kVersion, static_cast<std::uint8_t>(dtype),
                                static_cast<std::uint8_t>(t.ndim())};
  if (t.ndim() > 255) throw ContractViolation("encode_tensor: too many dimensions");
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.size() * (dtype == Dtype::f32 ? 4 : 8));
  for (double x : t.data()) {
    if (dtype == Dtype::f32) {
      put_le<float>(out, static_cast<float>(x));
    } else {
      put_le<double>(out, x);
    }
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& pos, Dtype* dtype) {
  expect_magic(bytes, pos, "LGRT");
  const auto version = get_u8(bytes, pos, "LGRT header");
  if (version != kVersion) throw IoError("unsupported LGRT version " + std::to_string(version));
  const auto tag = get_u8(bytes, pos, "LGRT header");
  if (tag > 1) throw IoError("unknown LGRT dtype " + std::to_string(tag));
  const auto ndim = get_u8(bytes, pos, "LGRT header");
  Shape shape;
  std::size_t numel = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    const auto d = get_le<std::uint64_t>(bytes, pos, "LGRT shape");
    shape.push_back(static_cast<std::size_t>(d));
    if (d != 0 && numel > (bytes.size() / d) + 1) throw IoError("truncated LGRT payload");
    numel *= static_cast<std::size_t>(d);
  }
  const std::size_t width = tag == 0 ? 4 : 8;
  if ((bytes.size() - pos) / width < numel) throw IoError("truncated LGRT payload: expected " + std::to_string(numel) + " values");
  std::vector<double> data(numel);
  for (auto& x : data) x = tag == 0 ? static_cast<double>(get_le<float>(bytes, pos, "LGRT payload")) : get_le<double>(bytes, pos, "LGRT payload");
  if (dtype) *dtype = static_cast<Dtype>(tag);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  write_file(path, encode_tensor(t, dtype));
}

Tensor read_tensor(const std::filesystem::path& path, Dtype* dtype) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  try {
    Tensor t = decode_tensor(bytes, pos, dtype);
    if (pos != bytes.size()) throw IoError("trailing bytes after tensor");
    return t;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& entries, Dtype dtype) {
  std::vector<std::uint8_t> out{'L', 'G', 'R', 'C', kVersion};
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw ContractViolation("checkpoint entry name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto enc = encode_tensor(t, dtype);
    out.insert(out.end(), enc.begin(), enc.end());
  }
  write_file(path, out);
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  try {
    expect_magic(bytes, pos, "LGRC");
    const auto version = get_u8(bytes, pos, "LGRC header");
    if (version != kVersion) throw IoError("unsupported LGRC version " + std::to_string(version));
    const auto count = get_le<std::uint32_t>(bytes, pos, "LGRC header");
    NamedTensors entries;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = get_le<std::uint16_t>(bytes, pos, "LGRC entry name");
      if (bytes.size() - pos < len) throw IoError("truncated LGRC entry name");
      std::string name(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + len));
      pos += len;
      entries.emplace_back(std::move(name), decode_tensor(bytes, pos));
    }
    if (pos != bytes.size()) throw IoError("trailing bytes after checkpoint");
    return entries;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

NamedTensors export_parameters(const ParameterSet& params) {
  NamedTensors out;
  for (const auto& p : params.items()) out.emplace_back(p.name, p.var.value());
  return out;
}

void import_parameters(ParameterSet& params, const NamedTensors& entries) {
  for (auto& p : params.items()) {
    const Tensor* found = nullptr;
    for (const auto& [name, t] : entries)
      if (name == p.name) found = &t;
    if (!found) throw ContractViolation("checkpoint has no entry '" + p.name + "'");
    if (found->shape() != p.var.shape()) {
      throw ContractViolation("checkpoint entry '" + p.name + "' has shape " + shape_str(found->shape()) + ", model expects " +
                              shape_str(p.var.shape()));
    }
    p.var.mutable_value() = *found;
  }
}

}  // namespace lgr
