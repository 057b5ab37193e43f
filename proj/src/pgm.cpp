#include "lgr/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "lgr/errors.hpp"
#include "lgr/serialize.hpp"

namespace lgr {

namespace {

struct Header {
  std::size_t width = 0, height = 0, maxval = 0, data_offset = 0;
};

Header parse_header(const std::vector<std::uint8_t>& b, const std::string& name) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw IoError(name + ": not a binary PGM (P5)");
  std::size_t pos = 2;
  auto number = [&]() -> std::size_t {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw IoError(name + ": truncated PGM header");
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + static_cast<std::size_t>(b[pos++] - '0');
      if (v > (1u << 30)) throw IoError(name + ": PGM header value out of range");
    }
    return v;
  };
  Header h;
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= b.size() || !std::isspace(b[pos])) throw IoError(name + ": truncated PGM header");
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw IoError(name + ": empty PGM");
  if (h.maxval == 0 || h.maxval > 65535) throw IoError(name + ": PGM maxval out of range");
  const std::size_t bytes = h.width * h.height * (h.maxval > 255 ? 2 : 1);
  if (b.size() - h.data_offset < bytes) throw IoError(name + ": truncated PGM raster");
  return h;
}

Tensor read_samples(const std::filesystem::path& path, bool normalize) {
  const auto b = read_file(path);
  const Header h = parse_header(b, path.string());
  Tensor out({h.height, h.width});
  const bool wide = h.maxval > 255;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t o = h.data_offset + i * (wide ? 2 : 1);
    const double v = wide ? static_cast<double>((b[o] << 8) | b[o + 1]) : static_cast<double>(b[o]);
    out[i] = normalize ? v / static_cast<double>(h.maxval) : v;
  }
  return out;
}

void write_samples(const std::filesystem::path& path, const Tensor& t, std::size_t maxval, bool scale) {
  if (t.ndim() != 2) throw ContractViolation("write_pgm: expected a 2-D image, got " + shape_str(t.shape()));
  const std::string header = "P5\n" + std::to_string(t.cols()) + " " + std::to_string(t.rows()) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double x : t.data()) {
    const double v = scale ? std::round(std::clamp(x, 0.0, 1.0) * static_cast<double>(maxval))
                           : std::clamp(std::round(x), 0.0, static_cast<double>(maxval));
    const auto u = static_cast<unsigned>(v);
    if (maxval > 255) out.push_back(static_cast<std::uint8_t>(u >> 8));
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
  }
  write_file(path, out);
}

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) { return read_samples(path, true); }
Tensor read_pgm_raw(const std::filesystem::path& path) { return read_samples(path, false); }

void write_pgm(const std::filesystem::path& path, const Tensor& image, int bits) {
  if (bits != 8 && bits != 16) throw ContractViolation("write_pgm: bits must be 8 or 16");
  write_samples(path, image, bits == 8 ? 255 : 65535, true);
}

void write_pgm_raw(const std::filesystem::path& path, const Tensor& labels) { write_samples(path, labels, 255, false); }

}  // namespace lgr
