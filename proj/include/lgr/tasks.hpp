#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "lgr/gcndecode.hpp"
#include "lgr/gcnhead.hpp"
#include "lgr/serialize.hpp"

namespace lgr {

class LgrModel;

struct ClassifierConfig {
  std::vector<std::size_t> dims{64, 32};  // after D
  std::size_t classes = 2;
  std::size_t steps = 300;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t log_every = 0;
};

/// GCN body, mean pooling and a fully connected softmax head.
class GraphClassifier {
 public:
  GraphClassifier(std::size_t dim, const ClassifierConfig& config, FeatureStats stats);

  const ClassifierConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const FeatureStats& stats() const { return stats_; }
  /// Class logits, [1 x classes].
  Var logits(const LabeledGraph& g) const;
  /// Softmax probabilities.
  std::vector<double> predict(const LabeledGraph& g) const;

  NamedTensors state() const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<GraphClassifier> load(const std::filesystem::path& path);

 private:
  ClassifierConfig config_;
  std::size_t dim_;
  FeatureStats stats_;
  ParameterSet params_;
  Rng init_rng_;
  GraphEncoder body_;
  Linear head_;
};

/// -[t log p + (1 - t) log(1 - p)] for a two-class problem, with p = P(class 1).
Var binary_form_loss(const Var& probs, int label);

struct TaskReport {
  std::vector<double> step_loss;
  void write_csv(std::ostream& out) const;
};

/// Minimizes the cross-entropy averaged over the (real + generated) training graphs.
/// Feature statistics for input standardization come from `train` itself.
std::unique_ptr<GraphClassifier> train_classifier(const std::vector<LabeledGraph>& train, std::size_t dim, const ClassifierConfig& config,
                                                  TaskReport* report = nullptr);

struct ClassificationMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double f1 = 0.0;           ///< positive class for two classes, macro otherwise
  double sensitivity = 0.0;  ///< recall, same averaging as f1
  double precision = 0.0;
  std::optional<double> auc;  ///< rank statistic; undefined for a single-class test set
};

/// Metrics from true labels and per-sample class probabilities.
ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<std::vector<double>>& probs,
                                             std::size_t classes);
/// Refuses test sets holding generated graphs.
ClassificationMetrics evaluate_classification(const GraphClassifier& clf, const std::vector<LabeledGraph>& test);

struct SegmenterConfig {
  std::size_t classes = 4;  // L + 1, background included
  std::size_t steps = 1000;
  std::size_t batch = 4;
  double lr = 1e-2;
  std::uint64_t seed = 1;
  std::size_t log_every = 0;
};

/// A graph with the per-layer graph hierarchy of the frozen reconstruction
/// decoder and its integer mask.
struct SegSample {
  Tensor features;
  std::vector<GraphWeights> graphs;
  Tensor mask;
  GraphSource source = GraphSource::real;
};

/// Runs the frozen model's decoder on `g` and keeps its per-layer graphs.
SegSample segmentation_sample(const LgrModel& model, const LabeledGraph& g, Tensor mask);

/// Index of the real graph with the nearest features (Frobenius), ties to the lowest index.
std::size_t nearest_real(const LabeledGraph& g, const std::vector<LabeledGraph>& real);

/// Decoder-shaped GCN with a per-pixel softmax over `classes` planes.
class Segmenter {
 public:
  Segmenter(const DecoderConfig& geometry, const SegmenterConfig& config);

  const SegmenterConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  /// Pixel logits, [(H*W) x classes].
  Var logits(const SegSample& s) const;
  /// Per-pixel probabilities.
  Tensor probabilities(const SegSample& s) const;
  /// Argmax label map, H x W.
  Tensor predict(const SegSample& s) const;

  NamedTensors state() const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<Segmenter> load(const std::filesystem::path& path);

 private:
  SegmenterConfig config_;
  DecoderConfig geometry_;
  ParameterSet params_;
  Rng init_rng_;
  Decoder decoder_;
};

/// Mean over pixels of -log p(true class).
Var segmentation_loss(const Var& logits, const Tensor& mask, std::size_t classes);

std::unique_ptr<Segmenter> train_segmenter(const std::vector<SegSample>& train, const DecoderConfig& geometry,
                                           const SegmenterConfig& config, TaskReport* report = nullptr);

struct SegmentationMetrics {
  std::vector<double> dice;  ///< per foreground class 1..L
  double mean_dice = 0.0;
};
/// Refuses test sets holding generated samples.
SegmentationMetrics evaluate_segmentation(const Segmenter& seg, const std::vector<SegSample>& test);

}  // namespace lgr
