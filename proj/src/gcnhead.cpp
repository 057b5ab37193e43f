#include "lgr/gcnhead.hpp"

#include <algorithm>
#include <cmath>

#include "lgr/errors.hpp"
#include "lgr/gcndecode.hpp"
#include "lgr/init.hpp"
#include "lgr/ops.hpp"
#include "lgr/parallel.hpp"
#include "lgr/selftrain.hpp"

namespace lgr {

std::vector<LabeledGraph> build_graphs(const LgrModel& model, const Dataset& data) {
  std::vector<LabeledGraph> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    NoGradGuard guard;
    LabeledGraph& g = out[i];
    g.features = model.features(data, i).features;
    const WeightsResult w = model.graph(constant(g.features), SelectMode::eval_hard);
    g.weights = w.graph.weights.value();
    g.pattern = w.graph.pattern;
    g.label = data.labels.empty() ? -1 : data.labels[i];
    g.origin = i;
  });
  return out;
}

FeatureStats FeatureStats::fit(const std::vector<LabeledGraph>& graphs) {
  if (graphs.empty()) throw ContractViolation("feature stats: no graphs");
  const std::size_t D = graphs.front().features.cols();
  FeatureStats s{Tensor({1, D}), Tensor({1, D})};
  double n = 0;
  for (const auto& g : graphs)
    for (std::size_t v = 0; v < g.features.rows(); ++v, ++n)
      for (std::size_t d = 0; d < D; ++d) s.mean[d] += g.features(v, d);
  for (std::size_t d = 0; d < D; ++d) s.mean[d] /= n;
  for (const auto& g : graphs)
    for (std::size_t v = 0; v < g.features.rows(); ++v)
      for (std::size_t d = 0; d < D; ++d) s.sd[d] += (g.features(v, d) - s.mean[d]) * (g.features(v, d) - s.mean[d]);
  for (std::size_t d = 0; d < D; ++d) s.sd[d] = std::max(std::sqrt(s.sd[d] / n), 1e-6);
  return s;
}

Tensor FeatureStats::standardize(const Tensor& f) const {
  Tensor out(f.shape());
  const std::size_t D = mean.size();
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = (f[i] - mean[i % D]) / sd[i % D];
  return out;
}

Var FeatureStats::restore(const Var& z) const {
  const Tensor& v = z.value();
  Tensor tiled(v.shape());
  const std::size_t D = sd.size();
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = sd[i % D];
  return ops::add_bias(ops::mul(z, constant(tiled)), constant(ops::reshape(constant(mean), {D}).value()));
}

Linear::Linear(ParameterSet& params, Rng& rng, std::size_t in, std::size_t out, const std::string& name) {
  w_ = params.add(name + ".w", glorot_uniform({in, out}, in, out, rng));
  b_ = params.add(name + ".b", Tensor({out}));
}

Var Linear::operator()(const Var& x) const { return ops::add_bias(ops::matmul(x, w_), b_); }

GraphEncoder::GraphEncoder(ParameterSet& params, Rng& rng, std::vector<std::size_t> dims, const std::string& prefix,
                           Aggregation mode)
    : dims_(std::move(dims)), mode_(mode) {
  if (dims_.size() < 2) throw ContractViolation("graph encoder needs at least one layer");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::string name = prefix + ".gcl" + std::to_string(l + 1);
    u_.push_back(params.add(name + ".U", glorot_uniform({dims_[l], dims_[l + 1]}, dims_[l], dims_[l + 1], rng)));
    b_.push_back(params.add(name + ".B", glorot_uniform({dims_[l], dims_[l + 1]}, dims_[l], dims_[l + 1], rng)));
  }
}

Var GraphEncoder::operator()(const Var& features, const GraphWeights& w) const {
  if (features.value().ndim() != 2 || features.value().cols() != dims_.front()) {
    throw ContractViolation("graph encoder expects V x " + std::to_string(dims_.front()) + " features, got " +
                            shape_str(features.shape()));
  }
  if (w.vertices() != features.value().rows()) {
    throw ContractViolation("graph encoder: " + std::to_string(features.value().rows()) + " vertices but weights " +
                            shape_str(w.weights.shape()));
  }
  Var h = features;
  for (std::size_t l = 0; l < u_.size(); ++l) h = gcn_layer(h, w, u_[l], b_[l], 0.2, mode_);
  return ops::mean_rows(h);
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractViolation("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

}  // namespace lgr
