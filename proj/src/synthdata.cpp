#include "lgr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "lgr/errors.hpp"
#include "lgr/pgm.hpp"
#include "lgr/rng.hpp"

namespace lgr {

namespace {

enum Stream : std::uint64_t { kGeometry = 1, kTexture = 2, kNoise = 3, kOpacity = 4, kClass = 5 };

struct Ellipse {
  double cy, cx, ay, ax;

  // Approximate signed distance in pixels, negative inside.
  double signed_distance(double y, double x) const {
    const double q = std::sqrt(((y - cy) / ay) * ((y - cy) / ay) + ((x - cx) / ax) * ((x - cx) / ax));
    return (q - 1.0) * std::min(ay, ax);
  }
  bool contains(double y, double x) const { return signed_distance(y, x) < 0.0; }
};

// Pulls the ellipse inside [margin, n - margin]; returns true when it moved or shrank.
bool clamp_inside(Ellipse& e, double n) {
  const double margin = 1.0;
  bool moved = false;
  auto fit = [&](double& c, double& a) {
    const double max_a = (n - 2 * margin) / 2.0;
    if (a > max_a) {
      a = max_a;
      moved = true;
    }
    const double lo = margin + a, hi = n - margin - a;
    if (c < lo || c > hi) {
      c = std::clamp(c, lo, hi);
      moved = true;
    }
  };
  fit(e.cy, e.ay);
  fit(e.cx, e.ax);
  return moved;
}

double soft_inside(const Ellipse& e, double y, double x, double edge) {
  return 1.0 / (1.0 + std::exp(e.signed_distance(y, x) / edge));
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec, PhantomClass cls, std::uint64_t seed) {
  if (spec.size < 8) throw ContractViolation("phantom size must be at least 8");
  const double n = static_cast<double>(spec.size);
  const Rng root(seed);
  Rng geo = root.fork(kGeometry), tex = root.fork(kTexture), noise = root.fork(kNoise), opa = root.fork(kOpacity);
  auto jit = [&](double nominal, double spread) { return n * (nominal + spec.jitter * geo.uniform(-spread, spread)); };

  // Radiograph convention: the patient's right lung is on the image left.
  Ellipse right{jit(0.47, 0.03), jit(0.30, 0.03), jit(0.28, 0.03), jit(0.15, 0.02)};
  Ellipse left{jit(0.47, 0.03), jit(0.70, 0.03), jit(0.28, 0.03), jit(0.15, 0.02)};
  Ellipse heart{jit(0.64, 0.03), jit(0.58, 0.03), jit(0.13, 0.02), jit(0.15, 0.02)};
  Phantom p;
  p.seed = seed;
  p.label = static_cast<int>(cls);
  for (Ellipse* e : {&right, &left, &heart})
    if (clamp_inside(*e, n)) ++p.clamped;
  if (p.clamped) std::clog << "phantom seed " << seed << ": " << p.clamped << " primitive(s) clamped inside the image\n";

  const double lung_i = tex.uniform(spec.lung_intensity_lo, spec.lung_intensity_hi);
  const double heart_i = tex.uniform(spec.heart_intensity_lo, spec.heart_intensity_hi);
  const double rib_a = tex.uniform(spec.rib_amplitude_lo, spec.rib_amplitude_hi);
  const double rib_f = tex.uniform(spec.rib_frequency_lo, spec.rib_frequency_hi);
  const double rib_phase = tex.uniform(0.0, 2.0 * std::numbers::pi);

  p.image = Tensor({spec.size, spec.size});
  p.mask = Tensor({spec.size, spec.size});
  for (std::size_t r = 0; r < spec.size; ++r)
    for (std::size_t c = 0; c < spec.size; ++c) {
      const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
      const double lungs = std::max(soft_inside(right, y, x, spec.edge), soft_inside(left, y, x, spec.edge));
      const double ribs = rib_a * std::sin(2.0 * std::numbers::pi * rib_f * y / n + rib_phase);
      double v = spec.background + lungs * (lung_i + ribs - spec.background);
      const double h = soft_inside(heart, y, x, spec.edge);
      v = v * (1.0 - h) + heart_i * h;
      p.image(r, c) = v;
      int label = kBackground;
      if (right.contains(y, x)) label = kRightLung;
      if (left.contains(y, x)) label = kLeftLung;
      if (heart.contains(y, x)) label = kHeart;
      p.mask(r, c) = label;
    }

  if (cls == PhantomClass::opacity) {
    const std::size_t blobs = spec.blobs_min + opa.below(spec.blobs_max - spec.blobs_min + 1);
    for (std::size_t b = 0; b < blobs; ++b) {
      const Ellipse& lung = opa.below(2) ? left : right;
      // Centre drawn uniformly inside the lung by rejection.
      double cy = lung.cy, cx = lung.cx;
      for (int tries = 0; tries < 100; ++tries) {
        const double ty = opa.uniform(lung.cy - lung.ay, lung.cy + lung.ay), tx = opa.uniform(lung.cx - lung.ax, lung.cx + lung.ax);
        if (lung.signed_distance(ty, tx) < -2.0) {
          cy = ty;
          cx = tx;
          break;
        }
      }
      const double radius = n * opa.uniform(spec.blob_radius_lo, spec.blob_radius_hi);
      const double depth = opa.uniform(spec.blob_depth_lo, spec.blob_depth_hi);
      for (std::size_t r = 0; r < spec.size; ++r)
        for (std::size_t c = 0; c < spec.size; ++c) {
          const int m = static_cast<int>(p.mask(r, c));
          if (m != kRightLung && m != kLeftLung) continue;
          const double dy = static_cast<double>(r) + 0.5 - cy, dx = static_cast<double>(c) + 0.5 - cx;
          p.image(r, c) -= depth * std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
        }
    }
  }

  for (double& v : p.image.data()) v = std::clamp(v + noise.normal(0.0, spec.noise), 0.0, 1.0);
  return p;
}

Dataset make_dataset(std::size_t count, const std::vector<double>& class_mix, const PhantomSpec& spec, std::uint64_t seed) {
  if (count == 0) throw ContractViolation("make_dataset: count must be at least 1");
  if (class_mix.size() != 2) throw ContractViolation("make_dataset: class mix needs two fractions (normal, opacity)");
  double total = 0.0;
  for (double f : class_mix) {
    if (f < 0.0) throw ContractViolation("make_dataset: negative class fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractViolation("make_dataset: class fractions must sum to 1");
  Rng classes = Rng(seed).fork(kClass);
  // Exact class counts, shuffled.
  const auto normals = static_cast<std::size_t>(std::llround(class_mix[0] * static_cast<double>(count)));
  std::vector<PhantomClass> order(count, PhantomClass::opacity);
  std::fill(order.begin(), order.begin() + static_cast<long>(std::min(normals, count)), PhantomClass::normal);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[classes.below(i)]);
  std::uint64_t state = seed;
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = splitmix64(state);
    const PhantomClass cls = order[i];
    Phantom p = make_phantom(spec, cls, s);
    d.images.push_back(std::move(p.image));
    d.masks.push_back(std::move(p.mask));
    d.labels.push_back(p.label);
    d.seeds.push_back(s);
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << i;
    d.names.push_back(name.str());
  }
  return d;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "images");
  if (data.has_masks()) std::filesystem::create_directories(dir / "masks");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot create " + (dir / "manifest.csv").string());
  manifest << "index,label,image,mask,seed\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = data.names.empty() ? std::to_string(i) : data.names[i];
    const std::string img = "images/" + name + ".pgm";
    const std::string msk = data.has_masks() ? "masks/" + name + ".pgm" : "";
    write_pgm(dir / img, data.images[i], 16);
    if (data.has_masks()) write_pgm_raw(dir / msk, data.masks[i]);
    manifest << i << "," << (data.labels.empty() ? -1 : data.labels[i]) << "," << img << "," << msk << ","
             << (data.seeds.empty() ? 0 : data.seeds[i]) << "\n";
  }
  if (!manifest) throw IoError("write failed: " + (dir / "manifest.csv").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto manifest_path = dir / "manifest.csv";
  if (!std::filesystem::exists(manifest_path)) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      d.images.push_back(read_pgm(f));
      d.labels.push_back(-1);
      d.seeds.push_back(0);
      d.names.push_back(f.stem().string());
    }
    return d;
  }
  std::ifstream in(manifest_path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool generated = line == "index,seed,label,path";
  if (!generated && line != "index,label,image,mask,seed") throw IoError(manifest_path.string() + ": unknown manifest header '" + line + "'");
  bool masks = !generated;
  std::vector<Tensor> mask_list;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (line.back() == ',') cols.emplace_back();
    if (generated) {
      if (cols.size() != 4) throw IoError(manifest_path.string() + ": malformed line '" + line + "'");
      d.images.push_back(read_pgm(dir / cols[3]));
      d.labels.push_back(std::stoi(cols[2]));
      d.seeds.push_back(std::stoull(cols[1]));
      d.names.push_back(std::filesystem::path(cols[3]).stem().string());
      continue;
    }
    if (cols.size() < 5) throw IoError(manifest_path.string() + ": malformed line '" + line + "'");
    d.images.push_back(read_pgm(dir / cols[2]));
    d.labels.push_back(std::stoi(cols[1]));
    d.seeds.push_back(std::stoull(cols[4]));
    d.names.push_back(std::filesystem::path(cols[2]).stem().string());
    if (cols[3].empty()) {
      masks = false;
    } else if (masks) {
      mask_list.push_back(read_pgm_raw(dir / cols[3]));
    }
  }
  if (masks) d.masks = std::move(mask_list);
  return d;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset d;
  for (std::size_t i : indices) {
    if (i >= data.size()) throw ContractViolation("subset: index out of range");
    d.images.push_back(data.images[i]);
    if (data.has_masks()) d.masks.push_back(data.masks[i]);
    d.labels.push_back(data.labels.empty() ? -1 : data.labels[i]);
    d.seeds.push_back(data.seeds.empty() ? 0 : data.seeds[i]);
    d.names.push_back(data.names.empty() ? std::to_string(i) : data.names[i]);
    if (!data.feature_files.empty()) d.feature_files.push_back(data.feature_files[i]);
  }
  return d;
}

void attach_features(Dataset& data, const std::filesystem::path& feature_dir) {
  data.feature_files.clear();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = data.names.empty() ? std::to_string(i) : data.names[i];
    auto path = feature_dir / (name + ".lgrt");
    if (!std::filesystem::exists(path)) throw IoError(path.string() + ": missing feature tensor");
    data.feature_files.push_back(std::move(path));
  }
}

}  // namespace lgr
