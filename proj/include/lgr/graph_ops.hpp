#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "lgr/autodiff.hpp"

namespace lgr {

/// Fixed sparse neighbourhood on a gh x gw vertex grid: every vertex keeps the
/// same list of K grid offsets (closed under negation, nearest first), so the
/// pattern is symmetric and entry (i, k) has a partner entry (j, partner[k]).
/// Slots that fall off the grid are marked invalid (-1).
struct SlotPattern {
  std::size_t grid_h = 0, grid_w = 0, slots = 0;
  std::vector<std::pair<int, int>> offsets;  // (dy, dx)
  std::vector<int> neighbor;                 // vertices x slots, -1 when off-grid
  std::vector<std::size_t> partner;          // slots

  std::size_t vertices() const { return grid_h * grid_w; }
  int at(std::size_t v, std::size_t k) const { return neighbor[v * slots + k]; }
};

/// Cached pattern for the given grid and slot count. `slots` must be even.
std::shared_ptr<const SlotPattern> slot_pattern(std::size_t grid_h, std::size_t grid_w, std::size_t slots);

/// Edge weights of a graph, either dense V x V or in slot layout V x K.
struct GraphWeights {
  Var weights;
  std::shared_ptr<const SlotPattern> pattern;  // null when dense

  bool dense() const { return pattern == nullptr; }
  std::size_t vertices() const { return weights.value().rows(); }
  /// Number of unordered vertex pairs with positive weight.
  std::size_t edge_count() const;
};

enum class Aggregation {
  sum,   ///< sum_j W_ij f_j
  mean,  ///< sum_j W_ij f_j / max(1, |{j : W_ij > 0}|)
};

/// Precomputed linear map out_n = sum_t weight[t] * in[src[t]] for t in [offset[n], offset[n+1]).
struct GatherTable {
  std::size_t in_count = 0;
  std::vector<std::size_t> offset;
  std::vector<std::size_t> src;
  std::vector<double> weight;
  /// Weights sum to one; evaluate as in[src[first]] + sum_t weight[t] * (in[src[t]] - in[src[first]])
  /// so constant inputs come out unchanged.
  bool anchored = false;

  std::size_t out_count() const { return offset.empty() ? 0 : offset.size() - 1; }
};

namespace ops {

/// C = clamp((F~ F~^T + 1) / 2, 0, 1) with unit-normalized rows F~ and unit
/// diagonal. A zero row has similarity 0.5 to every other row.
Var cosine_affinity(const Var& features);
/// Same map evaluated only on the slots of `pattern`; invalid slots are 0.
Var slot_cosine(const Var& features, const SlotPattern& pattern);
/// (L + L^T) / 2 in slot layout; invalid slots are 0.
Var slot_symmetrize(const Var& logits, std::shared_ptr<const SlotPattern> pattern);
/// Zeroes invalid slots.
Var slot_mask(const Var& values, std::shared_ptr<const SlotPattern> pattern);

/// Neighbour aggregation of `features` (V x d) over `graph`.
Var aggregate(const GraphWeights& graph, const Var& features, Aggregation mode);

Var gather(const Var& features, std::shared_ptr<const GatherTable> table);

}  // namespace ops
}  // namespace lgr
