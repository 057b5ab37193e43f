#include "lgr/gcndecode.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <tuple>

#include "lgr/errors.hpp"
#include "lgr/init.hpp"
#include "lgr/ops.hpp"

namespace lgr {

std::size_t DecoderConfig::upsample_stages() const {
  std::size_t s = 0;
  for (std::size_t p = patch; p > 1; p /= 2) ++s;
  return s;
}

void DecoderConfig::validate() const {
  if (patch == 0 || (patch & (patch - 1)) != 0) throw ContractViolation("decoder: patch size must be a power of two");
  if (height % patch != 0 || width % patch != 0) throw ContractViolation("decoder: patch size must divide the image");
  if (layer_dims.size() < 2) throw ContractViolation("decoder: need at least one layer");
  if (upsample_stages() > layers()) {
    throw ContractViolation("decoder: " + std::to_string(upsample_stages()) + " upsampling stages need at least as many layers, got " +
                            std::to_string(layers()));
  }
  for (std::size_t d : layer_dims)
    if (d == 0) throw ContractViolation("decoder: layer widths must be positive");
  if (k_int == 0) throw ContractViolation("decoder: k_int must be positive");
  if (slots == 0 || slots % 2) throw ContractViolation("decoder: slot count must be even and positive");
}

std::vector<GridCell> canonical_cells(std::size_t gh, std::size_t gw) {
  std::vector<GridCell> cells;
  cells.reserve(gh * gw);
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) cells.emplace_back(r, c);
  return cells;
}

namespace {

std::shared_ptr<const GatherTable> build_idw(const std::vector<GridCell>& cells, std::size_t gh, std::size_t gw, std::size_t k) {
  const std::size_t V = gh * gw;
  if (cells.size() != V) throw ContractViolation("upsample_idw: " + std::to_string(cells.size()) + " cells for a " + std::to_string(gh) + "x" + std::to_string(gw) + " grid");
  if (k == 0 || k > V) throw ContractViolation("upsample_idw: K_int = " + std::to_string(k) + " must lie in [1, " + std::to_string(V) + "]");
  std::vector<std::size_t> index_of(V, V);
  for (std::size_t i = 0; i < V; ++i) {
    const auto [r, c] = cells[i];
    if (r >= gh || c >= gw || index_of[r * gw + c] != V) throw ContractViolation("upsample_idw: cells do not form a complete grid");
    index_of[r * gw + c] = i;
  }
  auto t = std::make_shared<GatherTable>();
  t->in_count = V;
  t->anchored = true;
  t->offset.push_back(0);
  const std::size_t H = 2 * gh, W = 2 * gw;
  struct Cand {
    long d2;
    std::size_t r, c;
  };
  std::vector<Cand> cand(V);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (y % 2 == 0 && x % 2 == 0) {
        t->src.push_back(index_of[(y / 2) * gw + x / 2]);
        t->weight.push_back(1.0);
      } else {
        for (std::size_t r = 0; r < gh; ++r)
          for (std::size_t c = 0; c < gw; ++c) {
            const long dy = static_cast<long>(2 * r) - static_cast<long>(y), dx = static_cast<long>(2 * c) - static_cast<long>(x);
            cand[r * gw + c] = {dy * dy + dx * dx, r, c};
          }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end(), [](const Cand& a, const Cand& b) {
          return std::tie(a.d2, a.r, a.c) < std::tie(b.d2, b.r, b.c);
        });
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) total += 1.0 / static_cast<double>(cand[i].d2);
        for (std::size_t i = 0; i < k; ++i) {
          t->src.push_back(index_of[cand[i].r * gw + cand[i].c]);
          t->weight.push_back((1.0 / static_cast<double>(cand[i].d2)) / total);
        }
      }
      t->offset.push_back(t->src.size());
    }
  return t;
}

}  // namespace

std::shared_ptr<const GatherTable> idw_table(const std::vector<GridCell>& cells, std::size_t gh, std::size_t gw, std::size_t k) {
  const bool canonical = cells == canonical_cells(gh, gw);
  if (!canonical) return build_idw(cells, gh, gw, k);
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::shared_ptr<const GatherTable>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(gh, gw, k);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto t = build_idw(cells, gh, gw, k);
  cache.emplace(key, t);
  return t;
}

Var upsample_idw(const Var& features, const std::vector<GridCell>& cells, std::size_t gh, std::size_t gw, std::size_t k) {
  return ops::gather(features, idw_table(cells, gh, gw, k));
}

Var gcn_layer(const Var& features, const GraphWeights& w, const Var& u, const Var& b, double slope, Aggregation mode) {
  const Var self = ops::matmul(features, u);
  const Var neigh = ops::matmul(ops::aggregate(w, features, mode), b);
  const Var pre = ops::add(self, neigh);
  return slope < 0.0 ? pre : ops::leaky_relu(pre, slope);
}

std::shared_ptr<const SlotPattern> grid_pattern(std::size_t gh, std::size_t gw, const DecoderConfig& config) {
  if (gh * gw <= config.dense_limit) return nullptr;
  return slot_pattern(gh, gw, config.slots);
}

Var grid_correlation(const Var& features, std::size_t gh, std::size_t gw, const DecoderConfig& config) {
  auto pattern = grid_pattern(gh, gw, config);
  return pattern ? ops::slot_cosine(features, *pattern) : ops::cosine_affinity(features);
}

WeightsResult recompute_weights(const Var& features, std::size_t gh, std::size_t gw, const SelectionNet& theta, SelectMode mode,
                                const DecoderConfig& config) {
  WeightsResult r;
  auto pattern = grid_pattern(gh, gw, config);
  r.correlation = pattern ? ops::slot_cosine(features, *pattern) : ops::cosine_affinity(features);
  r.selection = theta.select(r.correlation, mode, pattern);
  r.graph.pattern = pattern;
  r.graph.weights = config.weight_mode == WeightMode::binary ? r.selection.mask : ops::mul(r.selection.mask, r.correlation);
  return r;
}

Decoder::Decoder(ParameterSet& params, Rng& rng, DecoderConfig config, const std::string& prefix) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t h = 1; h <= config_.layers(); ++h) {
    const std::size_t in = config_.layer_dims[h - 1], out = config_.layer_dims[h];
    u_.push_back(params.add(prefix + ".gcl" + std::to_string(h) + ".U", glorot_uniform({in, out}, in, out, rng)));
    b_.push_back(params.add(prefix + ".gcl" + std::to_string(h) + ".B", glorot_uniform({in, out}, in, out, rng)));
  }
}

bool Decoder::upsamples_after(std::size_t layer) const { return layer > config_.layers() - config_.upsample_stages(); }

Var Decoder::finish(const Var& out) const {
  if (config_.layer_dims.back() == 1) return ops::reshape(out, {config_.height, config_.width});
  return out;
}

DecodeResult Decoder::decode(const Var& features, const GraphWeights& w, const SelectionNet& theta, SelectMode mode,
                             const std::vector<GridCell>& cells) const {
  std::size_t gh = config_.grid_h(), gw = config_.grid_w();
  if (features.value().ndim() != 2 || features.value().rows() != gh * gw || features.value().cols() != config_.layer_dims[0]) {
    throw ContractViolation("decode: features " + shape_str(features.shape()) + ", expected " + std::to_string(gh * gw) + " x " +
                            std::to_string(config_.layer_dims[0]));
  }
  std::vector<GridCell> level_cells = cells.empty() ? canonical_cells(gh, gw) : cells;
  DecodeResult r;
  GraphWeights graph = w;
  Var f = features;
  const std::size_t H = config_.layers();
  for (std::size_t h = 1; h <= H; ++h) {
    r.graphs.push_back(graph);
    f = gcn_layer(f, graph, u_[h - 1], b_[h - 1], h == H ? -1.0 : config_.slope, config_.aggregation);
    if (upsamples_after(h)) {
      f = upsample_idw(f, level_cells, gh, gw, config_.k_int);
      gh *= 2;
      gw *= 2;
      level_cells = canonical_cells(gh, gw);
      if (h < H) graph = recompute_weights(f, gh, gw, theta, mode, config_).graph;
    }
  }
  r.image = finish(f);
  return r;
}

DecodeResult Decoder::decode_on_graphs(const Var& features, const std::vector<GraphWeights>& graphs) const {
  if (graphs.size() != config_.layers()) throw ContractViolation("decode_on_graphs: one graph per layer required");
  std::size_t gh = config_.grid_h(), gw = config_.grid_w();
  const auto cells = canonical_cells(gh, gw);
  DecodeResult r;
  r.graphs = graphs;
  Var f = features;
  const std::size_t H = config_.layers();
  for (std::size_t h = 1; h <= H; ++h) {
    f = gcn_layer(f, graphs[h - 1], u_[h - 1], b_[h - 1], h == H ? -1.0 : config_.slope, config_.aggregation);
    if (upsamples_after(h)) {
      f = upsample_idw(f, canonical_cells(gh, gw), gh, gw, config_.k_int);
      gh *= 2;
      gw *= 2;
    }
  }
  r.image = finish(f);
  return r;
}

Tensor clamp_image(const Tensor& image) {
  Tensor out = image;
  for (double& x : out.data()) x = std::clamp(x, 0.0, 1.0);
  return out;
}

}  // namespace lgr
