#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lgr/autodiff.hpp"
#include "lgr/graph_ops.hpp"
#include "lgr/rng.hpp"
#include "lgr/selection.hpp"

namespace lgr {

/// How edge weights are formed from a selection: W = S .* C, or W = S.
enum class WeightMode { product, binary };

struct DecoderConfig {
  std::size_t height = 64, width = 64, patch = 8;
  /// D^0 .. D^H; D^0 is the vertex feature width, D^H the output channels.
  std::vector<std::size_t> layer_dims{64, 96, 64, 32, 16, 8, 1};
  double slope = 0.2;
  std::size_t k_int = 12;
  /// Largest vertex count that gets a dense V x V correlation; above it the
  /// slot pattern is used.
  std::size_t dense_limit = 64;
  std::size_t slots = 32;
  Aggregation aggregation = Aggregation::mean;
  WeightMode weight_mode = WeightMode::product;

  std::size_t layers() const { return layer_dims.size() - 1; }
  std::size_t upsample_stages() const;
  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  /// Throws ContractViolation on inconsistent geometry.
  void validate() const;
};

using GridCell = std::pair<std::size_t, std::size_t>;  // (row, col)

/// Row-major cells of a gh x gw grid.
std::vector<GridCell> canonical_cells(std::size_t gh, std::size_t gw);

/// Interpolation from vertices at `cells` (a complete gh x gw grid in any
/// order) to the canonical 2gh x 2gw grid. Existing vertices keep their
/// value; each inserted vertex averages its k nearest existing vertices with
/// weights proportional to 1/d^2, normalized to sum 1. Distance ties go to
/// the smaller (row, col).
std::shared_ptr<const GatherTable> idw_table(const std::vector<GridCell>& cells, std::size_t gh, std::size_t gw, std::size_t k);

Var upsample_idw(const Var& features, const std::vector<GridCell>& cells, std::size_t gh, std::size_t gw, std::size_t k);

/// sigma(F U + A(W, F) B) with U, B of shape D_in x D_out. A negative slope
/// selects the identity activation.
Var gcn_layer(const Var& features, const GraphWeights& w, const Var& u, const Var& b, double slope, Aggregation mode);

/// Correlation of `features` on a canonical gh x gw grid, dense or in slot
/// layout depending on the vertex count.
Var grid_correlation(const Var& features, std::size_t gh, std::size_t gw, const DecoderConfig& config);
std::shared_ptr<const SlotPattern> grid_pattern(std::size_t gh, std::size_t gw, const DecoderConfig& config);

struct WeightsResult {
  GraphWeights graph;
  Var correlation;
  Selection selection;
};

/// W = R_Theta(C) .* C (or R_Theta(C) in binary mode) for features on a canonical grid.
WeightsResult recompute_weights(const Var& features, std::size_t gh, std::size_t gw, const SelectionNet& theta, SelectMode mode,
                                const DecoderConfig& config);

struct DecodeResult {
  /// Unclamped output, height x width for one channel, else (height*width) x channels.
  Var image;
  /// Graph used by each layer (layers() entries).
  std::vector<GraphWeights> graphs;
};

/// The decoder A_Omega: H graph convolution layers, the last log2(P) of
/// which are followed by 2x IDW upsampling and, except after the final
/// layer, by weight recomputation with R_Theta.
class Decoder {
 public:
  Decoder(ParameterSet& params, Rng& rng, DecoderConfig config, const std::string& prefix = "omega");

  const DecoderConfig& config() const { return config_; }

  /// `cells` gives the grid cell of each row of `features`; canonical order when empty.
  DecodeResult decode(const Var& features, const GraphWeights& w, const SelectionNet& theta, SelectMode mode,
                      const std::vector<GridCell>& cells = {}) const;
  /// Same layer stack on a fixed graph per layer (e.g. from a frozen decoder).
  DecodeResult decode_on_graphs(const Var& features, const std::vector<GraphWeights>& graphs) const;

 private:
  bool upsamples_after(std::size_t layer) const;
  Var finish(const Var& out) const;

  DecoderConfig config_;
  std::vector<Var> u_, b_;
};

/// Clamps to [0,1] for export.
Tensor clamp_image(const Tensor& image);

}  // namespace lgr
