#include "lgr/patchgraph.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lgr/errors.hpp"
#include "lgr/ops.hpp"
#include "lgr/serialize.hpp"

namespace lgr {

FeatureMatrix patch_grid(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ContractViolation("patch size " + std::to_string(patch) + " does not divide image " + std::to_string(height) +
                            "x" + std::to_string(width));
  }
  FeatureMatrix fm;
  fm.grid_h = height / patch;
  fm.grid_w = width / patch;
  for (std::size_t r = 0; r < fm.grid_h; ++r)
    for (std::size_t c = 0; c < fm.grid_w; ++c)
      fm.positions.emplace_back(static_cast<double>(r * patch) + patch / 2.0, static_cast<double>(c * patch) + patch / 2.0);
  return fm;
}

std::vector<std::pair<std::size_t, std::size_t>> zigzag_order(std::size_t p) {
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t s = 0; s + 1 < 2 * p; ++s) {
    const std::size_t lo = s < p ? 0 : s - p + 1, hi = std::min(s, p - 1);
    if (s % 2 == 1) {
      for (std::size_t r = lo; r <= hi; ++r) order.emplace_back(r, s - r);
    } else {
      for (std::size_t r = hi + 1; r-- > lo;) order.emplace_back(r, s - r);
    }
  }
  return order;
}

Tensor dct2(const Tensor& block) {
  const std::size_t p = block.rows();
  if (block.cols() != p) throw ContractViolation("dct2: block must be square, got " + shape_str(block.shape()));
  Tensor basis({p, p});  // basis(u, m) = a(u) cos(pi (2m+1) u / 2p)
  for (std::size_t u = 0; u < p; ++u)
    for (std::size_t m = 0; m < p; ++m)
      basis(u, m) = std::sqrt((u == 0 ? 1.0 : 2.0) / static_cast<double>(p)) *
                    std::cos(std::numbers::pi * static_cast<double>((2 * m + 1) * u) / static_cast<double>(2 * p));
  return matmul(matmul(basis, block), transpose(basis));
}

FeatureMatrix extract_patch_features(const Tensor& image, const PatchConfig& config, const std::filesystem::path& external) {
  if (image.ndim() != 2) throw ContractViolation("extract_patch_features: image must be 2-D, got " + shape_str(image.shape()));
  const std::size_t P = config.patch;
  FeatureMatrix fm = patch_grid(image.rows(), image.cols(), P);
  const std::size_t V = fm.vertices();

  if (config.featurizer == Featurizer::external) {
    Tensor f = read_tensor(external);
    if (f.ndim() != 2 || f.rows() != V) {
      throw IoError(external.string() + ": expected a " + std::to_string(V) + " x D feature tensor, got " + shape_str(f.shape()));
    }
    fm.features = std::move(f);
    return fm;
  }

  const std::size_t D = config.featurizer == Featurizer::raw ? P * P : config.feature_dim;
  if (D == 0 || D > P * P) throw ContractViolation("extract_patch_features: feature_dim must lie in [1, P*P]");
  const auto order = zigzag_order(P);
  fm.features = Tensor({V, D});
  Tensor block({P, P});
  for (std::size_t v = 0; v < V; ++v) {
    const std::size_t r0 = (v / fm.grid_w) * P, c0 = (v % fm.grid_w) * P;
    for (std::size_t r = 0; r < P; ++r)
      for (std::size_t c = 0; c < P; ++c) block(r, c) = image(r0 + r, c0 + c);
    if (config.featurizer == Featurizer::raw) {
      for (std::size_t k = 0; k < D; ++k) fm.features(v, k) = block[k];
    } else {
      const Tensor coef = dct2(block);
      for (std::size_t k = 0; k < D; ++k) fm.features(v, k) = coef(order[k].first, order[k].second);
    }
  }
  return fm;
}

Tensor correlation(const Tensor& features) { return ops::cosine_affinity(constant(features)).value(); }

ForegroundIndex foreground_index(const Tensor& mask, std::size_t patch) {
  const FeatureMatrix grid = patch_grid(mask.rows(), mask.cols(), patch);
  ForegroundIndex fg;
  fg.member.assign(grid.vertices(), 0);
  for (std::size_t v = 0; v < grid.vertices(); ++v) {
    const std::size_t r = (v / grid.grid_w) * patch + patch / 2, c = (v % grid.grid_w) * patch + patch / 2;
    if (mask(r, c) > 0.0) {
      fg.member[v] = 1;
      fg.indices.push_back(v);
    }
  }
  return fg;
}

ForegroundIndex foreground_all(std::size_t vertices, bool value) {
  ForegroundIndex fg;
  fg.member.assign(vertices, value ? 1 : 0);
  if (value)
    for (std::size_t v = 0; v < vertices; ++v) fg.indices.push_back(v);
  return fg;
}

Tensor foreground_pair_mask(const ForegroundIndex& fg, const SlotPattern* pattern) {
  const std::size_t V = fg.member.size();
  if (!pattern) {
    Tensor m({V, V});
    for (std::size_t i : fg.indices)
      for (std::size_t j : fg.indices) m(i, j) = 1.0;
    return m;
  }
  if (pattern->vertices() != V) throw ContractViolation("foreground_pair_mask: pattern size mismatch");
  Tensor m({V, pattern->slots});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t k = 0; k < pattern->slots; ++k) {
      const int j = pattern->at(i, k);
      if (j >= 0 && fg.contains(i) && fg.contains(static_cast<std::size_t>(j))) m(i, k) = 1.0;
    }
  return m;
}

std::pair<Tensor, Tensor> split_fg_bg(const Tensor& c, const ForegroundIndex& fg, const SlotPattern* pattern) {
  const Tensor m = foreground_pair_mask(fg, pattern);
  if (m.shape() != c.shape()) {
    throw ContractViolation("split_fg_bg: correlation " + shape_str(c.shape()) + " vs foreground layout " + shape_str(m.shape()));
  }
  Tensor fgc(c.shape()), bgc = c;
  for (std::size_t i = 0; i < c.size(); ++i) {
    fgc[i] = m[i] * c[i];
    bgc[i] = c[i] - fgc[i];
  }
  return {fgc, bgc};
}

Var build_weights(const Var& c, const Var& s) {
  if (c.shape() != s.shape()) {
    throw ContractViolation("build_weights: C " + shape_str(c.shape()) + " vs S " + shape_str(s.shape()));
  }
  return ops::mul(s, c);
}

std::size_t match_features(const Tensor& ref, const Tensor& target, std::size_t ref_index) {
  if (target.ndim() != 2 || target.rows() == 0) throw ContractViolation("match_features: empty target");
  if (ref.ndim() != 2 || ref.cols() != target.cols()) {
    throw ContractViolation("match_features: feature widths differ: " + shape_str(ref.shape()) + " vs " + shape_str(target.shape()));
  }
  if (ref_index >= ref.rows()) throw ContractViolation("match_features: reference index out of range");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < target.rows(); ++t) {
    double d = 0.0;
    for (std::size_t k = 0; k < ref.cols(); ++k) {
      const double e = ref(ref_index, k) - target(t, k);
      d += e * e;
    }
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  return best;
}

EdgeReport edge_report(const GraphWeights& w, const ForegroundIndex& fg) {
  EdgeReport r;
  r.vertices = w.vertices();
  if (fg.member.size() != r.vertices) throw ContractViolation("edge_report: foreground index size mismatch");
  const Tensor& v = w.weights.value();
  auto visit = [&](std::size_t i, std::size_t j, double x) {
    if (x <= 0.0) return;
    ++r.total_edges;
    if (fg.contains(i) && fg.contains(j)) ++r.foreground_edges;
  };
  if (w.dense()) {
    for (std::size_t i = 0; i < r.vertices; ++i)
      for (std::size_t j = i + 1; j < r.vertices; ++j) visit(i, j, v(i, j));
  } else {
    for (std::size_t i = 0; i < r.vertices; ++i)
      for (std::size_t k = 0; k < w.pattern->slots; ++k) {
        const int j = w.pattern->at(i, k);
        if (j > static_cast<int>(i)) visit(i, static_cast<std::size_t>(j), v(i, k));
      }
  }
  const double pairs = r.vertices > 1 ? static_cast<double>(r.vertices * (r.vertices - 1)) / 2.0 : 1.0;
  r.total_percent = 100.0 * static_cast<double>(r.total_edges) / pairs;
  r.foreground_percent = 100.0 * static_cast<double>(r.foreground_edges) / pairs;
  return r;
}

}  // namespace lgr
