#include "lgr/graph_ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "lgr/errors.hpp"
#include "lgr/tensor.hpp"

namespace lgr {

std::shared_ptr<const SlotPattern> slot_pattern(std::size_t grid_h, std::size_t grid_w, std::size_t slots) {
  if (slots == 0 || slots % 2 != 0) throw ContractViolation("slot_pattern: slot count must be even and positive");
  static std::mutex mutex;
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::shared_ptr<const SlotPattern>> cache;
  std::lock_guard lock(mutex);
  auto key = std::make_tuple(grid_h, grid_w, slots);
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  // Offsets by increasing length, ties in (dy, dx) order; each offset is
  // immediately followed by its negation so the list stays closed under negation.
  int radius = 1;
  while ((2 * radius + 1) * (2 * radius + 1) - 1 < static_cast<int>(slots)) ++radius;
  std::vector<std::pair<int, int>> candidates;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy || dx) candidates.emplace_back(dy, dx);
  std::sort(candidates.begin(), candidates.end(), [](auto a, auto b) {
    const int la = a.first * a.first + a.second * a.second, lb = b.first * b.first + b.second * b.second;
    return la != lb ? la < lb : a < b;
  });
  auto p = std::make_shared<SlotPattern>();
  p->grid_h = grid_h;
  p->grid_w = grid_w;
  p->slots = slots;
  for (auto o : candidates) {
    if (p->offsets.size() >= slots) break;
    if (std::find(p->offsets.begin(), p->offsets.end(), o) != p->offsets.end()) continue;
    p->offsets.push_back(o);
    p->offsets.emplace_back(-o.first, -o.second);
  }
  for (std::size_t k = 0; k < slots; ++k) {
    const auto neg = std::make_pair(-p->offsets[k].first, -p->offsets[k].second);
    p->partner.push_back(static_cast<std::size_t>(std::find(p->offsets.begin(), p->offsets.end(), neg) - p->offsets.begin()));
  }
  const std::size_t V = grid_h * grid_w;
  p->neighbor.assign(V * slots, -1);
  for (std::size_t y = 0; y < grid_h; ++y)
    for (std::size_t x = 0; x < grid_w; ++x)
      for (std::size_t k = 0; k < slots; ++k) {
        const long ny = static_cast<long>(y) + p->offsets[k].first;
        const long nx = static_cast<long>(x) + p->offsets[k].second;
        if (ny >= 0 && nx >= 0 && ny < static_cast<long>(grid_h) && nx < static_cast<long>(grid_w)) {
          p->neighbor[(y * grid_w + x) * slots + k] = static_cast<int>(static_cast<std::size_t>(ny) * grid_w + static_cast<std::size_t>(nx));
        }
      }
  cache.emplace(key, p);
  return p;
}

std::size_t GraphWeights::edge_count() const {
  const Tensor& w = weights.value();
  std::size_t count = 0;
  if (dense()) {
    const std::size_t V = w.rows();
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = i + 1; j < V; ++j)
        if (w(i, j) > 0.0) ++count;
    return count;
  }
  for (std::size_t i = 0; i < pattern->vertices(); ++i)
    for (std::size_t k = 0; k < pattern->slots; ++k) {
      const int j = pattern->at(i, k);
      if (j > static_cast<int>(i) && w(i, k) > 0.0) ++count;
    }
  return count;
}

namespace ops {

namespace {

struct UnitRows {
  Tensor unit;
  std::vector<double> norm;
};

UnitRows unit_rows(const Tensor& f) {
  const std::size_t V = f.rows(), D = f.cols();
  UnitRows u{Tensor(f.shape()), std::vector<double>(V, 0.0)};
  for (std::size_t i = 0; i < V; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += f(i, d) * f(i, d);
    u.norm[i] = std::sqrt(s);
    if (u.norm[i] > 0.0)
      for (std::size_t d = 0; d < D; ++d) u.unit(i, d) = f(i, d) / u.norm[i];
  }
  return u;
}

double affine_cos(double c) { return std::clamp((c + 1.0) * 0.5, 0.0, 1.0); }

// Maps dL/dU (gradient w.r.t. unit rows) back to dL/dF through row normalisation.
void unit_backward(const Tensor& dunit, const UnitRows& u, Tensor& gf) {
  const std::size_t V = u.unit.rows(), D = u.unit.cols();
  for (std::size_t i = 0; i < V; ++i) {
    if (u.norm[i] == 0.0) continue;
    double proj = 0.0;
    for (std::size_t d = 0; d < D; ++d) proj += dunit(i, d) * u.unit(i, d);
    for (std::size_t d = 0; d < D; ++d) gf(i, d) += (dunit(i, d) - proj * u.unit(i, d)) / u.norm[i];
  }
}

void require_features(const char* op, const Var& f) {
  if (f.value().ndim() != 2) throw ContractViolation(std::string(op) + ": features must be 2-D, got " + shape_str(f.shape()));
}

}  // namespace

Var cosine_affinity(const Var& features) {
  require_features("cosine-affinity", features);
  const Tensor& f = features.value();
  const std::size_t V = f.rows(), D = f.cols();
  auto u = std::make_shared<UnitRows>(unit_rows(f));
  Tensor dots = lgr::matmul(u->unit, lgr::transpose(u->unit));
  Tensor c({V, V});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j) {
      if (i == j) {
        c(i, j) = 1.0;
      } else if (u->norm[i] == 0.0 || u->norm[j] == 0.0) {
        c(i, j) = 0.5;
      } else {
        c(i, j) = affine_cos(dots(i, j));
      }
    }
  return make_op("cosine-affinity", std::move(c), {features}, [u, V, D](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    // dC/dU for the off-diagonal, non-degenerate entries; C_ij = (1 + u_i.u_j)/2.
    Tensor sym({V, V});
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j)
        if (i != j && u->norm[i] > 0.0 && u->norm[j] > 0.0) sym(i, j) = 0.5 * (n.grad(i, j) + n.grad(j, i));
    const Tensor dunit = lgr::matmul(sym, u->unit);
    unit_backward(dunit, *u, in.grad_buffer());
    (void)D;
  });
}

Var slot_cosine(const Var& features, const SlotPattern& pattern) {
  require_features("slot-cosine", features);
  const Tensor& f = features.value();
  const std::size_t V = f.rows(), D = f.cols(), K = pattern.slots;
  if (V != pattern.vertices()) {
    throw ContractViolation("slot-cosine: " + std::to_string(V) + " feature rows for a pattern over " +
                            std::to_string(pattern.vertices()) + " vertices");
  }
  auto u = std::make_shared<UnitRows>(unit_rows(f));
  Tensor c({V, K});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const int j = pattern.at(i, k);
      if (j < 0) continue;
      if (u->norm[i] == 0.0 || u->norm[static_cast<std::size_t>(j)] == 0.0) {
        c(i, k) = 0.5;
        continue;
      }
      double dot = 0.0;
      const double* a = &u->unit(i, 0);
      const double* b = &u->unit(static_cast<std::size_t>(j), 0);
      for (std::size_t d = 0; d < D; ++d) dot += a[d] * b[d];
      c(i, k) = affine_cos(dot);
    }
  const SlotPattern* pat = &pattern;
  return make_op("slot-cosine", std::move(c), {features}, [u, pat, V, D, K](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor dunit({V, D});
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const int jj = pat->at(i, k);
        if (jj < 0) continue;
        const auto j = static_cast<std::size_t>(jj);
        if (u->norm[i] == 0.0 || u->norm[j] == 0.0) continue;
        const double g = 0.5 * n.grad(i, k);
        for (std::size_t d = 0; d < D; ++d) {
          dunit(i, d) += g * u->unit(j, d);
          dunit(j, d) += g * u->unit(i, d);
        }
      }
    unit_backward(dunit, *u, in.grad_buffer());
  });
}

Var slot_symmetrize(const Var& logits, std::shared_ptr<const SlotPattern> pattern) {
  const Tensor& l = logits.value();
  const std::size_t V = pattern->vertices(), K = pattern->slots;
  if (l.shape() != Shape{V, K}) {
    throw ContractViolation("slot-symmetrize: logits " + shape_str(l.shape()) + " for a " + std::to_string(V) + "x" +
                            std::to_string(K) + " slot layout");
  }
  Tensor s({V, K});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const int j = pattern->at(i, k);
      if (j >= 0) s(i, k) = 0.5 * (l(i, k) + l(static_cast<std::size_t>(j), pattern->partner[k]));
    }
  return make_op("slot-symmetrize", std::move(s), {logits}, [pattern, V, K](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t k = 0; k < K; ++k) {
        const int j = pattern->at(i, k);
        if (j < 0) continue;
        g(i, k) += 0.5 * n.grad(i, k);
        g(static_cast<std::size_t>(j), pattern->partner[k]) += 0.5 * n.grad(i, k);
      }
  });
}

Var slot_mask(const Var& values, std::shared_ptr<const SlotPattern> pattern) {
  const std::size_t V = pattern->vertices(), K = pattern->slots;
  if (values.shape() != Shape{V, K}) throw ContractViolation("slot-mask: shape " + shape_str(values.shape()));
  Tensor out = values.value();
  for (std::size_t i = 0; i < V * K; ++i)
    if (pattern->neighbor[i] < 0) out[i] = 0.0;
  return make_op("slot-mask", std::move(out), {values}, [pattern](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (pattern->neighbor[i] >= 0) g[i] += n.grad[i];
  });
}

Var aggregate(const GraphWeights& graph, const Var& features, Aggregation mode) {
  require_features("aggregate", features);
  const Tensor& w = graph.weights.value();
  const Tensor& f = features.value();
  const std::size_t V = f.rows(), D = f.cols();
  if (w.ndim() != 2 || w.rows() != V || (graph.dense() && w.cols() != V) ||
      (!graph.dense() && (graph.pattern->vertices() != V || w.cols() != graph.pattern->slots))) {
    throw ContractViolation("aggregate: weights " + shape_str(w.shape()) + " do not match features " + shape_str(f.shape()));
  }
  auto norm = std::make_shared<std::vector<double>>(V, 1.0);
  if (mode == Aggregation::mean) {
    for (std::size_t i = 0; i < V; ++i) {
      std::size_t deg = 0;
      for (std::size_t c = 0; c < w.cols(); ++c) deg += w(i, c) > 0.0;
      (*norm)[i] = 1.0 / static_cast<double>(std::max<std::size_t>(deg, 1));
    }
  }

  if (graph.dense()) {
    Tensor out = lgr::matmul(w, f);
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t d = 0; d < D; ++d) out(i, d) *= (*norm)[i];
    return make_op("aggregate", std::move(out), {graph.weights, features}, [norm, V, D](Node& n) {
      Tensor scaled = n.grad;  // diag(norm) * dOut
      for (std::size_t i = 0; i < V; ++i)
        for (std::size_t d = 0; d < D; ++d) scaled(i, d) *= (*norm)[i];
      Node& wn = *n.inputs[0];
      Node& fn = *n.inputs[1];
      if (wn.requires_grad) {
        const Tensor dw = lgr::matmul(scaled, lgr::transpose(fn.value));
        Tensor& g = wn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dw[i];
      }
      if (fn.requires_grad) {
        const Tensor df = lgr::matmul(lgr::transpose(wn.value), scaled);
        Tensor& g = fn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += df[i];
      }
    });
  }

  auto pattern = graph.pattern;
  const std::size_t K = pattern->slots;
  Tensor out({V, D});
  for (std::size_t i = 0; i < V; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t k = 0; k < K; ++k) {
      const int j = pattern->at(i, k);
      const double wv = w(i, k);
      if (j < 0 || wv == 0.0) continue;
      const double* frow = f.data().data() + static_cast<std::size_t>(j) * D;
      for (std::size_t d = 0; d < D; ++d) orow[d] += wv * frow[d];
    }
    for (std::size_t d = 0; d < D; ++d) orow[d] *= (*norm)[i];
  }
  return make_op("aggregate", std::move(out), {graph.weights, features}, [norm, pattern, V, D, K](Node& n) {
    Node& wn = *n.inputs[0];
    Node& fn = *n.inputs[1];
    Tensor* gw = wn.requires_grad ? &wn.grad_buffer() : nullptr;
    Tensor* gf = fn.requires_grad ? &fn.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < V; ++i) {
      const double* grow = &n.grad(i, 0);
      const double ni = (*norm)[i];
      for (std::size_t k = 0; k < K; ++k) {
        const int jj = pattern->at(i, k);
        if (jj < 0) continue;
        const auto j = static_cast<std::size_t>(jj);
        if (gw) {
          const double* frow = &fn.value(j, 0);
          double acc = 0.0;
          for (std::size_t d = 0; d < D; ++d) acc += grow[d] * frow[d];
          (*gw)(i, k) += ni * acc;
        }
        if (gf) {
          const double wv = ni * wn.value(i, k);
          if (wv == 0.0) continue;
          double* gfrow = &(*gf)(j, 0);
          for (std::size_t d = 0; d < D; ++d) gfrow[d] += wv * grow[d];
        }
      }
    }
  });
}

Var gather(const Var& features, std::shared_ptr<const GatherTable> table) {
  require_features("gather", features);
  const Tensor& f = features.value();
  if (f.rows() != table->in_count) {
    throw ContractViolation("gather: table expects " + std::to_string(table->in_count) + " rows, got " + shape_str(f.shape()));
  }
  const std::size_t N = table->out_count(), D = f.cols();
  Tensor out({N, D});
  for (std::size_t n = 0; n < N; ++n) {
    double* orow = &out(n, 0);
    std::size_t t = table->offset[n];
    const std::size_t end = table->offset[n + 1];
    if (table->anchored && t < end) {
      const double* arow = f.data().data() + table->src[t] * D;
      for (std::size_t d = 0; d < D; ++d) orow[d] = arow[d];
      for (++t; t < end; ++t) {
        const double wv = table->weight[t];
        const double* frow = f.data().data() + table->src[t] * D;
        for (std::size_t d = 0; d < D; ++d) orow[d] += wv * (frow[d] - arow[d]);
      }
      continue;
    }
    for (; t < end; ++t) {
      const double wv = table->weight[t];
      const double* frow = f.data().data() + table->src[t] * D;
      for (std::size_t d = 0; d < D; ++d) orow[d] += wv * frow[d];
    }
  }
  return make_op("gather", std::move(out), {features}, [table, N, D](Node& n) {
    Node& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    for (std::size_t o = 0; o < N; ++o) {
      const double* grow = &n.grad(o, 0);
      const std::size_t first = table->offset[o], end = table->offset[o + 1];
      double anchor = 1.0;
      if (table->anchored)
        for (std::size_t t = first + 1; t < end; ++t) anchor -= table->weight[t];
      for (std::size_t t = first; t < end; ++t) {
        const double wv = table->anchored && t == first ? anchor : table->weight[t];
        double* gi = &g(table->src[t], 0);
        for (std::size_t d = 0; d < D; ++d) gi[d] += wv * grow[d];
      }
    }
  });
}

}  // namespace ops
}  // namespace lgr
