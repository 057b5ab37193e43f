#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "lgr/graph_ops.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

enum class Featurizer { raw, dct, external };

struct PatchConfig {
  std::size_t patch = 8;
  Featurizer featurizer = Featurizer::dct;
  /// Coefficients kept per patch in dct mode; ignored for raw (P*P) and external (file width).
  std::size_t feature_dim = 64;
};

/// Vertex features of one image, one row per patch in row-major grid order.
struct FeatureMatrix {
  Tensor features;                                          // V x D
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<std::pair<double, double>> positions;  // patch centres (row, col) in pixels

  std::size_t vertices() const { return grid_h * grid_w; }
};

/// Patch-centre grid for an image of the given size.
FeatureMatrix patch_grid(std::size_t height, std::size_t width, std::size_t patch);

/// raw: flattened patch pixels. dct: the first D zig-zag coefficients of the
/// orthonormal 2-D DCT-II. external: `external` holds a V x D tensor file.
FeatureMatrix extract_patch_features(const Tensor& image, const PatchConfig& config,
                                     const std::filesystem::path& external = {});

/// (row, col) index pairs of a P x P block in zig-zag order.
std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t p);
/// Orthonormal DCT-II of a square block.
Tensor dct2(const Tensor& block);

/// Dense V x V correlation, see ops::cosine_affinity.
Tensor correlation(const Tensor& features);

/// Patches whose centre pixel is foreground (mask value > 0).
struct ForegroundIndex {
  std::vector<char> member;  // per vertex
  std::vector<std::size_t> indices;

  bool contains(std::size_t v) const { return member[v] != 0; }
  std::size_t size() const { return indices.size(); }
};

/// The centre pixel of a P x P patch at grid (r, c) is (r*P + P/2, c*P + P/2).
ForegroundIndex foreground_index(const Tensor& mask, std::size_t patch);
ForegroundIndex foreground_all(std::size_t vertices, bool value);

/// 1 where both endpoints are foreground, in dense (V x V) or slot (V x K) layout.
Tensor foreground_pair_mask(const ForegroundIndex& fg, const SlotPattern* pattern = nullptr);

/// (C_fg, C_bg) with C_fg = C on foreground pairs and C_bg = C - C_fg.
std::pair<Tensor, Tensor> split_fg_bg(const Tensor& c, const ForegroundIndex& fg, const SlotPattern* pattern = nullptr);

/// W = S .* C.
Var build_weights(const Var& c, const Var& s);

/// Index of the target row closest to reference row `ref_index`; ties go to the lowest index.
std::size_t match_features(const Tensor& ref, const Tensor& target, std::size_t ref_index);

struct EdgeReport {
  std::size_t vertices = 0;
  std::size_t total_edges = 0;
  std::size_t foreground_edges = 0;
  double total_percent = 0.0;
  double foreground_percent = 0.0;
};

/// Counts unordered pairs i < j with W_ij > 0; percentages are relative to V(V-1)/2.
EdgeReport edge_report(const GraphWeights& w, const ForegroundIndex& fg);

}  // namespace lgr
