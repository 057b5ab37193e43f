#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lgr/autodiff.hpp"
#include "lgr/graph_ops.hpp"
#include "lgr/rng.hpp"

namespace lgr {

class LgrModel;
struct Dataset;

enum class GraphSource { real, generated };

/// One latent graph P = (F, W) with its class label (-1 when unknown).
struct LabeledGraph {
  Tensor features;
  Tensor weights;
  std::shared_ptr<const SlotPattern> pattern;  // null when dense
  int label = -1;
  GraphSource source = GraphSource::real;
  /// Index of the dataset image it came from, or of the real graph whose mask it borrows.
  std::size_t origin = 0;

  GraphWeights graph() const { return {constant(weights), pattern}; }
};

/// Features of every image and their eval-hard weights under the model's selection network.
std::vector<LabeledGraph> build_graphs(const LgrModel& model, const Dataset& data);

/// Per-column mean and standard deviation of real features.
struct FeatureStats {
  Tensor mean, sd;  // [1 x D]
  static FeatureStats fit(const std::vector<LabeledGraph>& graphs);
  Tensor standardize(const Tensor& f) const;
  Var restore(const Var& z) const;
};

/// x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, Rng& rng, std::size_t in, std::size_t out, const std::string& name);
  Var operator()(const Var& x) const;
  std::size_t in() const { return w_.value().rows(); }
  std::size_t out() const { return w_.value().cols(); }

 private:
  Var w_, b_;
};

/// Graph convolution layers (leaky relu 0.2 after each) followed by mean pooling over vertices.
class GraphEncoder {
 public:
  GraphEncoder() = default;
  GraphEncoder(ParameterSet& params, Rng& rng, std::vector<std::size_t> dims, const std::string& prefix,
               Aggregation mode = Aggregation::mean);
  /// Pooled embedding, shape [1 x dims.back()].
  Var operator()(const Var& features, const GraphWeights& w) const;
  std::size_t in() const { return dims_.front(); }
  std::size_t out() const { return dims_.back(); }

 private:
  std::vector<std::size_t> dims_;
  std::vector<Var> u_, b_;
  Aggregation mode_ = Aggregation::mean;
};

/// One-hot rows for integer labels.
Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

}  // namespace lgr
