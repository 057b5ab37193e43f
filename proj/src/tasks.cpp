#include "lgr/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "lgr/adam.hpp"
#include "lgr/errors.hpp"
#include "lgr/metrics.hpp"
#include "lgr/ops.hpp"
#include "lgr/selftrain.hpp"

namespace lgr {

namespace {

Tensor size_list(const std::vector<std::size_t>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
  return t;
}

const Tensor& entry(const NamedTensors& entries, const std::string& name, const std::filesystem::path& path) {
  for (const auto& [n, t] : entries)
    if (n == name) return t;
  throw IoError(path.string() + ": checkpoint lacks " + name);
}

// Shared owner loop: uniform sampling with replacement, batch-mean loss, Adam.
template <typename Sample, typename LossFn>
void fit(ParameterSet& params, const std::vector<Sample>& train, std::size_t steps, std::size_t batch, double lr, std::uint64_t seed,
         std::size_t log_every, const char* who, LossFn loss_fn, TaskReport* report) {
  if (train.empty()) throw ContractViolation(std::string(who) + ": empty training set");
  if (batch == 0) throw ContractViolation(std::string(who) + ": batch must be positive");
  Rng rng = Rng(seed).fork(40);
  Adam adam({.lr = lr});
  for (std::size_t step = 1; step <= steps; ++step) {
    params.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Var loss = loss_fn(train[rng.below(train.size())]);
      if (!std::isfinite(loss.item())) {
        throw DivergenceError(std::string(who) + " training diverged: non-finite loss", static_cast<long>(step) - 1);
      }
      total += loss.item();
      backward(ops::scale(loss, 1.0 / static_cast<double>(batch)));
    }
    adam.step(params);
    if (report) report->step_loss.push_back(total / static_cast<double>(batch));
    if (log_every && step % log_every == 0) std::clog << who << " step " << step << " loss " << total / static_cast<double>(batch) << "\n";
  }
  params.zero_grad();
}

}  // namespace

void TaskReport::write_csv(std::ostream& out) const {
  out << "step,loss\n";
  for (std::size_t i = 0; i < step_loss.size(); ++i) out << i + 1 << "," << step_loss[i] << "\n";
}

GraphClassifier::GraphClassifier(std::size_t dim, const ClassifierConfig& config, FeatureStats stats)
    : config_(config), dim_(dim), stats_(std::move(stats)), init_rng_(config.seed) {
  if (config_.classes < 2) throw ContractViolation("classifier needs at least two classes");
  if (config_.dims.empty()) throw ContractViolation("classifier needs at least one graph layer");
  if (stats_.mean.size() != dim_) throw ContractViolation("classifier: feature stats width differs from D");
  std::vector<std::size_t> dims{dim_};
  dims.insert(dims.end(), config_.dims.begin(), config_.dims.end());
  body_ = GraphEncoder(params_, init_rng_, dims, "cls");
  head_ = Linear(params_, init_rng_, dims.back(), config_.classes, "cls.head");
}

Var GraphClassifier::logits(const LabeledGraph& g) const {
  return head_(body_(constant(stats_.standardize(g.features)), g.graph()));
}

std::vector<double> GraphClassifier::predict(const LabeledGraph& g) const {
  NoGradGuard guard;
  const Tensor p = ops::softmax(logits(g), 1).value();
  return {p.data().begin(), p.data().end()};
}

NamedTensors GraphClassifier::state() const {
  NamedTensors out;
  out.emplace_back("meta.cls", Tensor({6}, {static_cast<double>(config_.classes), static_cast<double>(dim_),
                                             static_cast<double>(config_.steps), static_cast<double>(config_.batch), config_.lr,
                                             static_cast<double>(config_.seed)}));
  out.emplace_back("meta.cls_dims", size_list(config_.dims));
  out.emplace_back("stats.mean", stats_.mean);
  out.emplace_back("stats.sd", stats_.sd);
  for (auto& e : export_parameters(params_)) out.push_back(std::move(e));
  return out;
}

void GraphClassifier::save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }

std::unique_ptr<GraphClassifier> GraphClassifier::load(const std::filesystem::path& path) {
  const NamedTensors entries = read_checkpoint(path);
  const Tensor& m = entry(entries, "meta.cls", path);
  ClassifierConfig c;
  c.classes = static_cast<std::size_t>(m[0]);
  c.steps = static_cast<std::size_t>(m[2]);
  c.batch = static_cast<std::size_t>(m[3]);
  c.lr = m[4];
  c.seed = static_cast<std::uint64_t>(m[5]);
  c.dims.clear();
  for (double x : entry(entries, "meta.cls_dims", path).data()) c.dims.push_back(static_cast<std::size_t>(x));
  auto clf = std::make_unique<GraphClassifier>(static_cast<std::size_t>(m[1]), c,
                                               FeatureStats{entry(entries, "stats.mean", path), entry(entries, "stats.sd", path)});
  import_parameters(clf->params_, entries);
  return clf;
}

Var binary_form_loss(const Var& probs, int label) {
  if (probs.value().size() != 2) throw ContractViolation("binary form needs two class probabilities, got " + shape_str(probs.shape()));
  if (label != 0 && label != 1) throw ContractViolation("binary form needs label 0 or 1");
  const Var p1 = ops::slice(ops::reshape(probs, {2}), 0, 1, 2);
  return ops::binary_cross_entropy(p1, Tensor({1}, static_cast<double>(label)));
}

std::unique_ptr<GraphClassifier> train_classifier(const std::vector<LabeledGraph>& train, std::size_t dim, const ClassifierConfig& config,
                                                  TaskReport* report) {
  for (const auto& g : train)
    if (g.label < 0 || static_cast<std::size_t>(g.label) >= config.classes) {
      throw ContractViolation("train_classifier: label " + std::to_string(g.label) + " outside [0, " + std::to_string(config.classes) + ")");
    }
  if (train.empty()) throw ContractViolation("train_classifier: empty training set");
  auto clf = std::make_unique<GraphClassifier>(dim, config, FeatureStats::fit(train));
  const GraphClassifier& c = *clf;
  fit(clf->params(), train, config.steps, config.batch, config.lr, config.seed, config.log_every, "classifier",
      [&](const LabeledGraph& g) { return ops::softmax_cross_entropy(c.logits(g), one_hot({g.label}, config.classes)); }, report);
  return clf;
}

namespace {

// Mann-Whitney estimate of P(score_pos > score_neg), ties counted half.
std::optional<double> rank_auc(const std::vector<double>& score, const std::vector<bool>& positive) {
  const std::size_t n = score.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      ++pos;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<std::vector<double>>& probs,
                                             std::size_t classes) {
  if (truth.size() != probs.size()) throw ContractViolation("classification_metrics: label and prediction counts differ");
  ClassificationMetrics m;
  m.count = truth.size();
  if (truth.empty()) return m;
  std::vector<double> tp(classes), fp(classes), fn(classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (probs[i].size() != classes) throw ContractViolation("classification_metrics: probability row has wrong width");
    const auto t = static_cast<std::size_t>(truth[i]);
    if (truth[i] < 0 || t >= classes) throw ContractViolation("classification_metrics: label out of range");
    const auto p = static_cast<std::size_t>(std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin());
    if (p == t) {
      ++correct;
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  auto f1_of = [&](std::size_t c) {
    const double pr = ratio(tp[c], tp[c] + fp[c]), re = ratio(tp[c], tp[c] + fn[c]);
    return pr + re > 0 ? 2 * pr * re / (pr + re) : 0.0;
  };
  std::vector<double> aucs;
  for (std::size_t c = (classes == 2 ? 1 : 0); c < classes; ++c) {
    std::vector<double> score;
    std::vector<bool> pos;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      score.push_back(probs[i][c]);
      pos.push_back(static_cast<std::size_t>(truth[i]) == c);
    }
    if (auto a = rank_auc(score, pos)) aucs.push_back(*a);
  }
  if (classes == 2) {
    m.f1 = f1_of(1);
    m.sensitivity = ratio(tp[1], tp[1] + fn[1]);
    m.precision = ratio(tp[1], tp[1] + fp[1]);
  } else {
    for (std::size_t c = 0; c < classes; ++c) {
      m.f1 += f1_of(c);
      m.sensitivity += ratio(tp[c], tp[c] + fn[c]);
      m.precision += ratio(tp[c], tp[c] + fp[c]);
    }
    m.f1 /= static_cast<double>(classes);
    m.sensitivity /= static_cast<double>(classes);
    m.precision /= static_cast<double>(classes);
  }
  std::vector<bool> present(classes, false);
  for (int t : truth) present[static_cast<std::size_t>(t)] = true;
  if (std::count(present.begin(), present.end(), true) >= 2 && !aucs.empty()) {
    m.auc = std::accumulate(aucs.begin(), aucs.end(), 0.0) / static_cast<double>(aucs.size());
  }
  return m;
}

ClassificationMetrics evaluate_classification(const GraphClassifier& clf, const std::vector<LabeledGraph>& test) {
  std::vector<int> truth;
  std::vector<std::vector<double>> probs;
  for (const auto& g : test) {
    if (g.source != GraphSource::real) throw ContractViolation("test split contains generated graphs");
    truth.push_back(g.label);
    probs.push_back(clf.predict(g));
  }
  return classification_metrics(truth, probs, clf.config().classes);
}

SegSample segmentation_sample(const LgrModel& model, const LabeledGraph& g, Tensor mask) {
  const auto& dc = model.decoder_config();
  if (mask.ndim() != 2 || mask.rows() != dc.height || mask.cols() != dc.width) {
    throw ContractViolation("mask " + shape_str(mask.shape()) + " does not match image size " + std::to_string(dc.height) + "x" +
                            std::to_string(dc.width));
  }
  NoGradGuard guard;
  const Var f = constant(g.features);
  SegSample s;
  s.features = g.features;
  s.graphs = model.decoder().decode(f, g.graph(), model.theta(), SelectMode::eval_hard).graphs;
  s.mask = std::move(mask);
  s.source = g.source;
  return s;
}

std::size_t nearest_real(const LabeledGraph& g, const std::vector<LabeledGraph>& real) {
  if (real.empty()) throw ContractViolation("nearest_real: no real graphs");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].features.shape() != g.features.shape()) throw ContractViolation("nearest_real: feature shapes differ");
    double d = 0;
    for (std::size_t k = 0; k < g.features.size(); ++k) d += (g.features[k] - real[i].features[k]) * (g.features[k] - real[i].features[k]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {

DecoderConfig segmenter_geometry(DecoderConfig g, std::size_t classes) {
  g.layer_dims.back() = classes;
  return g;
}

}  // namespace

Segmenter::Segmenter(const DecoderConfig& geometry, const SegmenterConfig& config)
    : config_(config),
      geometry_(segmenter_geometry(geometry, config.classes)),
      init_rng_(config.seed),
      decoder_(params_, init_rng_, geometry_, "lambda") {
  if (config_.classes < 2) throw ContractViolation("segmenter needs at least two classes");
}

Var Segmenter::logits(const SegSample& s) const {
  const Var out = decoder_.decode_on_graphs(constant(s.features), s.graphs).image;
  return ops::reshape(out, {geometry_.height * geometry_.width, config_.classes});
}

Tensor Segmenter::probabilities(const SegSample& s) const {
  NoGradGuard guard;
  return ops::softmax(logits(s), 1).value();
}

Tensor Segmenter::predict(const SegSample& s) const {
  NoGradGuard guard;
  const Tensor l = logits(s).value();
  Tensor out({geometry_.height, geometry_.width});
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < config_.classes; ++c)
      if (l(p, c) > l(p, best)) best = c;
    out[p] = static_cast<double>(best);
  }
  return out;
}

NamedTensors Segmenter::state() const {
  NamedTensors out = geometry_entries(PatchConfig{geometry_.patch, Featurizer::dct, geometry_.layer_dims.front()}, geometry_);
  out.emplace_back("meta.seg", Tensor({5}, {static_cast<double>(config_.classes), static_cast<double>(config_.steps),
                                             static_cast<double>(config_.batch), config_.lr, static_cast<double>(config_.seed)}));
  for (auto& e : export_parameters(params_)) out.push_back(std::move(e));
  return out;
}

void Segmenter::save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }

std::unique_ptr<Segmenter> Segmenter::load(const std::filesystem::path& path) {
  const NamedTensors entries = read_checkpoint(path);
  const auto geometry = geometry_from(entries).second;
  const Tensor& m = entry(entries, "meta.seg", path);
  SegmenterConfig c;
  c.classes = static_cast<std::size_t>(m[0]);
  c.steps = static_cast<std::size_t>(m[1]);
  c.batch = static_cast<std::size_t>(m[2]);
  c.lr = m[3];
  c.seed = static_cast<std::uint64_t>(m[4]);
  auto seg = std::make_unique<Segmenter>(geometry, c);
  import_parameters(seg->params_, entries);
  return seg;
}

Var segmentation_loss(const Var& logits, const Tensor& mask, std::size_t classes) {
  if (logits.value().rows() != mask.size() || logits.value().cols() != classes) {
    throw ContractViolation("segmentation_loss: logits " + shape_str(logits.shape()) + " vs mask " + shape_str(mask.shape()));
  }
  Tensor target({mask.size(), classes});
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double v = mask[p];
    if (v < 0 || v >= static_cast<double>(classes) || v != std::floor(v)) {
      throw ContractViolation("segmentation_loss: mask value " + std::to_string(v) + " is not a label in [0, " + std::to_string(classes) + ")");
    }
    target(p, static_cast<std::size_t>(v)) = 1.0;
  }
  return ops::softmax_cross_entropy(logits, target);
}

std::unique_ptr<Segmenter> train_segmenter(const std::vector<SegSample>& train, const DecoderConfig& geometry,
                                           const SegmenterConfig& config, TaskReport* report) {
  for (const auto& s : train)
    if (s.mask.rows() != geometry.height || s.mask.cols() != geometry.width) {
      throw ContractViolation("train_segmenter: mask " + shape_str(s.mask.shape()) + " does not match the decoder geometry");
    }
  auto seg = std::make_unique<Segmenter>(geometry, config);
  const Segmenter& sg = *seg;
  fit(seg->params(), train, config.steps, config.batch, config.lr, config.seed, config.log_every, "segmenter",
      [&](const SegSample& s) { return segmentation_loss(sg.logits(s), s.mask, config.classes); }, report);
  return seg;
}

SegmentationMetrics evaluate_segmentation(const Segmenter& seg, const std::vector<SegSample>& test) {
  SegmentationMetrics m;
  const std::size_t L = seg.config().classes - 1;
  m.dice.assign(L, 0.0);
  if (test.empty()) return m;
  for (const auto& s : test) {
    if (s.source != GraphSource::real) throw ContractViolation("test split contains generated samples");
    const Tensor pred = seg.predict(s);
    for (std::size_t l = 1; l <= L; ++l) m.dice[l - 1] += dice(pred, s.mask, static_cast<int>(l));
  }
  for (double& d : m.dice) d /= static_cast<double>(test.size());
  m.mean_dice = std::accumulate(m.dice.begin(), m.dice.end(), 0.0) / static_cast<double>(L);
  return m;
}

}  // namespace lgr
