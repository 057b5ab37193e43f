#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lgr/tensor.hpp"

namespace lgr {

enum class PhantomClass { normal = 0, opacity = 1 };

/// Geometry is expressed as fractions of the image side so the same spec
/// works at any size.
struct PhantomSpec {
  std::size_t size = 64;
  double noise = 0.02;
  double background = 0.03;
  /// Width of the logistic edge profile in pixels.
  double edge = 1.5;
  /// Scales every jitter range; 0 gives the nominal geometry.
  double jitter = 1.0;
  double lung_intensity_lo = 0.55, lung_intensity_hi = 0.75;
  double heart_intensity_lo = 0.32, heart_intensity_hi = 0.42;
  double rib_amplitude_lo = 0.04, rib_amplitude_hi = 0.09;
  double rib_frequency_lo = 4.0, rib_frequency_hi = 6.0;  // periods per image height
  std::size_t blobs_min = 1, blobs_max = 3;
  double blob_radius_lo = 0.05, blob_radius_hi = 0.09;
  double blob_depth_lo = 0.25, blob_depth_hi = 0.4;
};

/// Mask labels.
enum : int { kBackground = 0, kRightLung = 1, kLeftLung = 2, kHeart = 3 };

struct Phantom {
  Tensor image;  // size x size, in [0,1]
  Tensor mask;   // labels 0..3; heart wins over lungs
  int label = 0;
  std::uint64_t seed = 0;
  /// Number of primitives that had to be pulled back inside the image.
  int clamped = 0;
};

/// One phantom. Geometry, rib pattern, noise and opacity blobs draw from
/// separate streams of `seed`, so the two classes differ only inside lungs.
Phantom make_phantom(const PhantomSpec& spec, PhantomClass cls, std::uint64_t seed);

struct Dataset {
  std::vector<Tensor> images;
  std::vector<Tensor> masks;  // empty when the source had none
  std::vector<int> labels;    // -1 when unknown
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> names;
  /// Per-image V x D LGRT feature files for the external featurizer; empty otherwise.
  std::vector<std::filesystem::path> feature_files;

  std::size_t size() const { return images.size(); }
  bool has_masks() const { return !masks.empty(); }
};

/// `class_mix` holds the fraction of each class (normal, opacity) and must sum to 1;
/// counts are rounded and the order shuffled.
Dataset make_dataset(std::size_t count, const std::vector<double>& class_mix, const PhantomSpec& spec, std::uint64_t seed);

/// Writes images/NNNNN.pgm, masks/NNNNN.pgm and manifest.csv
/// (index,label,image,mask,seed).
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
/// Reads a directory written by write_dataset, or any directory of PGM files
/// (sorted by name, no masks or labels).
Dataset read_dataset(const std::filesystem::path& dir);

/// Pairs every image with <feature_dir>/<name>.lgrt. A missing file throws IoError.
void attach_features(Dataset& data, const std::filesystem::path& feature_dir);

/// Subset by indices.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace lgr
