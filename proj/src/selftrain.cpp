#include "lgr/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "lgr/errors.hpp"
#include "lgr/metrics.hpp"
#include "lgr/ops.hpp"
#include "lgr/parallel.hpp"

namespace lgr {

Setup parse_setup(const std::string& s) {
  if (s == "1" || s == "setup1" || s == "setup1-binary-noreg") return Setup::binary_noreg;
  if (s == "2" || s == "setup2" || s == "setup2-product-noreg") return Setup::product_noreg;
  if (s == "3" || s == "setup3" || s == "setup3-uniform-sparsity") return Setup::uniform_sparsity;
  if (s == "4" || s == "setup4" || s == "setup4-foreground-priority") return Setup::foreground_priority;
  throw ContractViolation("unknown setup '" + s + "'");
}

std::string setup_name(Setup s) {
  switch (s) {
    case Setup::binary_noreg: return "setup1";
    case Setup::product_noreg: return "setup2";
    case Setup::uniform_sparsity: return "setup3";
    case Setup::foreground_priority: return "setup4";
  }
  return "?";
}

LgrModel::LgrModel(PatchConfig patch, DecoderConfig decoder, std::uint64_t seed)
    : patch_(patch), init_rng_(seed), theta_(params_, init_rng_), decoder_(params_, init_rng_, std::move(decoder)) {
  const auto& dc = decoder_.config();
  if (dc.patch != patch_.patch) throw ContractViolation("model: decoder and featurizer patch sizes differ");
  if (patch_.featurizer == Featurizer::raw && dc.layer_dims[0] != patch_.patch * patch_.patch) {
    throw ContractViolation("model: raw features have width P*P");
  }
  if (patch_.featurizer == Featurizer::dct && dc.layer_dims[0] != patch_.feature_dim) {
    throw ContractViolation("model: decoder input width " + std::to_string(dc.layer_dims[0]) + " differs from feature_dim " +
                            std::to_string(patch_.feature_dim));
  }
}

FeatureMatrix LgrModel::features(const Tensor& image, const std::filesystem::path& external) const {
  const auto& dc = decoder_.config();
  if (image.ndim() != 2 || image.rows() != dc.height || image.cols() != dc.width) {
    throw ContractViolation("image " + shape_str(image.shape()) + " does not match model geometry " + std::to_string(dc.height) +
                            "x" + std::to_string(dc.width));
  }
  if (patch_.featurizer == Featurizer::external && external.empty()) throw ContractViolation("model: external featurizer needs feature files");
  FeatureMatrix f = extract_patch_features(image, patch_, external);
  if (f.features.cols() != dc.layer_dims[0]) {
    throw ContractViolation("model: features have width " + std::to_string(f.features.cols()) + ", decoder expects " +
                            std::to_string(dc.layer_dims[0]));
  }
  return f;
}

FeatureMatrix LgrModel::features(const Dataset& data, std::size_t i) const {
  return features(data.images[i], data.feature_files.empty() ? std::filesystem::path{} : data.feature_files[i]);
}

WeightsResult LgrModel::graph(const Var& features, SelectMode mode) const {
  const auto& dc = decoder_.config();
  return recompute_weights(features, dc.grid_h(), dc.grid_w(), theta_, mode, dc);
}

Tensor LgrModel::reconstruct(const Tensor& features) const {
  NoGradGuard guard;
  const Var f = constant(features);
  const WeightsResult g = graph(f, SelectMode::eval_hard);
  return decoder_.decode(f, g.graph, theta_, SelectMode::eval_hard).image.value();
}

NamedTensors geometry_entries(const PatchConfig& patch, const DecoderConfig& d) {
  Tensor geo({12}, {static_cast<double>(d.height), static_cast<double>(d.width), static_cast<double>(d.patch),
                    static_cast<double>(d.k_int), static_cast<double>(d.dense_limit), static_cast<double>(d.slots),
                    static_cast<double>(d.aggregation), static_cast<double>(d.weight_mode),
                    static_cast<double>(patch.featurizer), static_cast<double>(patch.feature_dim), d.slope,
                    static_cast<double>(patch.patch)});
  Tensor dims({d.layer_dims.size()});
  for (std::size_t i = 0; i < d.layer_dims.size(); ++i) dims[i] = static_cast<double>(d.layer_dims[i]);
  return {{"meta.geometry", geo}, {"meta.layer_dims", dims}};
}

std::pair<PatchConfig, DecoderConfig> geometry_from(const NamedTensors& entries) {
  const Tensor* geo = nullptr;
  const Tensor* dims = nullptr;
  for (const auto& [n, t] : entries) {
    if (n == "meta.geometry") geo = &t;
    if (n == "meta.layer_dims") dims = &t;
  }
  if (!geo || !dims || geo->size() != 12) throw IoError("checkpoint lacks model geometry");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>((*geo)[i]); };
  DecoderConfig d;
  d.height = u(0);
  d.width = u(1);
  d.patch = u(2);
  d.k_int = u(3);
  d.dense_limit = u(4);
  d.slots = u(5);
  d.aggregation = static_cast<Aggregation>(u(6));
  d.weight_mode = static_cast<WeightMode>(u(7));
  d.slope = (*geo)[10];
  d.layer_dims.clear();
  for (double x : dims->data()) d.layer_dims.push_back(static_cast<std::size_t>(x));
  PatchConfig p;
  p.featurizer = static_cast<Featurizer>(u(8));
  p.feature_dim = u(9);
  p.patch = u(11);
  return {p, d};
}

NamedTensors LgrModel::state() const {
  NamedTensors out = geometry_entries(patch_, decoder_.config());
  for (auto& e : export_parameters(params_)) out.push_back(std::move(e));
  return out;
}

void LgrModel::save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }

std::unique_ptr<LgrModel> LgrModel::load(const std::filesystem::path& path) {
  const NamedTensors entries = read_checkpoint(path);
  auto [patch, decoder] = geometry_from(entries);
  auto model = std::make_unique<LgrModel>(patch, decoder, 0);
  import_parameters(model->params_, entries);
  return model;
}

TrainConfig TrainConfig::resolved() const {
  TrainConfig c = *this;
  if (c.alpha < 0.0) throw ContractViolation("alpha must be non-negative");
  switch (c.setup) {
    case Setup::binary_noreg:
    case Setup::product_noreg:
      c.alpha = c.beta = 0.0;
      break;
    case Setup::uniform_sparsity:
      c.beta = c.alpha;
      break;
    case Setup::foreground_priority:
      if (c.beta < 0.0) c.beta = 12.0 * c.alpha;
      break;
  }
  if (c.beta < 0.0) throw ContractViolation("beta must be non-negative");
  if (c.batch == 0) throw ContractViolation("batch must be positive");
  if (!(c.lr > 0.0)) throw ContractViolation("learning rate must be positive");
  return c;
}

Var recon_loss(const Var& x, const Var& xhat, const Var& s_fg, const Var& s_bg, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ContractViolation("recon_loss: alpha and beta must be non-negative");
  if (x.value().size() != xhat.value().size()) {
    throw ContractViolation("recon_loss: x " + shape_str(x.shape()) + " vs xhat " + shape_str(xhat.shape()));
  }
  Var loss = ops::scale(ops::squared_l2(ops::sub(ops::reshape(xhat, x.shape()), x)), 0.5);
  if (alpha > 0.0) loss = ops::add(loss, ops::scale(ops::l1_norm(s_fg), alpha));
  if (beta > 0.0) loss = ops::add(loss, ops::scale(ops::l1_norm(s_bg), beta));
  return loss;
}

void TrainReport::write_csv(std::ostream& steps_out, std::ostream& epochs_out) const {
  steps_out << "step,loss,penalty\n";
  for (std::size_t i = 0; i < step_loss.size(); ++i) steps_out << i + 1 << "," << step_loss[i] << "," << step_penalty[i] << "\n";
  epochs_out << "epoch,step,val_psnr,val_psnr_fg,total_edges,foreground_edges,background_edges,total_percent,foreground_percent\n";
  for (const auto& e : epochs) {
    epochs_out << e.epoch << "," << e.step << "," << e.val_psnr << "," << e.val_psnr_fg << "," << e.total_edges << ","
               << e.foreground_edges << "," << e.background_edges << "," << e.total_percent << "," << e.foreground_percent << "\n";
  }
}

std::vector<LgrSample> prepare_samples(const LgrModel& model, const Dataset& data) {
  std::vector<LgrSample> out;
  const std::size_t V = model.decoder_config().grid_h() * model.decoder_config().grid_w();
  for (std::size_t i = 0; i < data.size(); ++i) {
    LgrSample s;
    s.image = data.images[i];
    s.features = model.features(data, i).features;
    if (data.has_masks()) {
      s.foreground = foreground_index(data.masks[i], model.patch().patch);
      s.pixel_mask = Tensor(data.masks[i].shape());
      for (std::size_t k = 0; k < s.pixel_mask.size(); ++k) s.pixel_mask[k] = data.masks[i][k] > 0.0 ? 1.0 : 0.0;
    } else {
      s.foreground = foreground_all(V, false);
    }
    out.push_back(std::move(s));
  }
  return out;
}

EvalSummary psnr_eval(const LgrModel& model, const std::vector<LgrSample>& samples) {
  EvalSummary r;
  if (samples.empty()) return r;
  struct One {
    double psnr = 0.0;
    std::optional<double> psnr_fg;
    EdgeReport edges;
  };
  std::vector<One> per(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    NoGradGuard guard;
    const auto& s = samples[i];
    const Var f = constant(s.features);
    const WeightsResult g = model.graph(f, SelectMode::eval_hard);
    const Tensor xhat = clamp_image(model.decoder().decode(f, g.graph, model.theta(), SelectMode::eval_hard).image.value());
    per[i].psnr = *psnr(s.image, xhat);
    if (!s.pixel_mask.empty()) per[i].psnr_fg = psnr(s.image, xhat, &s.pixel_mask);
    per[i].edges = edge_report(g.graph, s.foreground);
  });
  for (const One& o : per) {
    r.per_image_psnr.push_back(o.psnr);
    r.psnr += o.psnr;
    if (o.psnr_fg) {
      r.psnr_fg += *o.psnr_fg;
      ++r.fg_images;
    }
    r.total_edges += static_cast<double>(o.edges.total_edges);
    r.foreground_edges += static_cast<double>(o.edges.foreground_edges);
    r.background_edges += static_cast<double>(o.edges.total_edges - o.edges.foreground_edges);
    r.total_percent += o.edges.total_percent;
    r.foreground_percent += o.edges.foreground_percent;
  }
  const double n = static_cast<double>(samples.size());
  r.psnr /= n;
  if (r.fg_images) r.psnr_fg /= static_cast<double>(r.fg_images);
  r.total_edges /= n;
  r.foreground_edges /= n;
  r.background_edges /= n;
  r.total_percent /= n;
  r.foreground_percent /= n;
  return r;
}

Var sample_objective(const LgrModel& model, const LgrSample& s, const TrainConfig& cfg, SelectMode mode, double* penalty) {
  const Var f = constant(s.features);
  const WeightsResult g = model.graph(f, mode);
  const DecodeResult d = model.decoder().decode(f, g.graph, model.theta(), mode);
  Var s_fg = constant(Tensor::scalar(0.0)), s_bg = s_fg;
  if (cfg.alpha > 0.0 || cfg.beta > 0.0) {
    const SlotPattern* pattern = g.graph.pattern.get();
    if (cfg.penalty == PenaltyReading::separate) {
      auto [cf, cb] = split_fg_bg(g.correlation.value(), s.foreground, pattern);
      s_fg = model.theta().select(constant(cf), mode, g.graph.pattern).relaxed;
      s_bg = model.theta().select(constant(cb), mode, g.graph.pattern).relaxed;
    } else {
      const Tensor m = foreground_pair_mask(s.foreground, pattern);
      Tensor inv = m;
      for (double& x : inv.data()) x = 1.0 - x;
      s_fg = ops::mul(g.selection.relaxed, constant(m));
      s_bg = ops::mul(g.selection.relaxed, constant(inv));
    }
  }
  if (penalty) *penalty = cfg.alpha * ops::l1_norm(s_fg).item() + cfg.beta * ops::l1_norm(s_bg).item();
  return recon_loss(constant(s.image), d.image, s_fg, s_bg, cfg.alpha, cfg.beta);
}

TrainReport train_lgr(LgrModel& model, const Dataset& data, const TrainConfig& config) {
  const TrainConfig cfg = config.resolved();
  if (data.size() == 0) throw ContractViolation("train_lgr: empty dataset");
  const WeightMode wanted = cfg.setup == Setup::binary_noreg ? WeightMode::binary : WeightMode::product;
  if (model.decoder_config().weight_mode != wanted) {
    throw ContractViolation("train_lgr: " + setup_name(cfg.setup) + " needs " +
                            (wanted == WeightMode::binary ? "binary (W = S)" : "product (W = S .* C)") + " weights");
  }
  const std::vector<LgrSample> all = prepare_samples(model, data);

  Rng rng = Rng(cfg.seed).fork(10);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::size_t n_val = all.size() < 2 ? 0 : std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(all.size()))));
  std::vector<LgrSample> train, val;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(all[order[i]]);
  if (val.empty()) val = train;

  Adam adam({.lr = cfg.lr});
  TrainReport report;
  ParameterSet& params = model.params();
  NamedTensors best = export_parameters(params);
  double best_psnr = -1.0;
  std::size_t since_best = 0, epoch = 0;
  const std::size_t steps_per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;

  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t cursor = perm.size();

  auto end_epoch = [&](std::size_t step) {
    ++epoch;
    const EvalSummary ev = psnr_eval(model, val);
    report.epochs.push_back({epoch, step, ev.psnr, ev.psnr_fg, ev.total_edges, ev.foreground_edges, ev.background_edges,
                             ev.total_percent, ev.foreground_percent});
    if (cfg.log_every) {
      std::clog << "epoch " << epoch << " step " << step << " val psnr " << ev.psnr << " dB, edges " << ev.total_edges << " (fg "
                << ev.foreground_edges << ")\n";
    }
    if (ev.psnr > best_psnr) {
      best_psnr = ev.psnr;
      best = export_parameters(params);
      report.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    params.zero_grad();
    double loss_sum = 0.0, penalty_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == perm.size()) {
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        cursor = 0;
      }
      const LgrSample& s = train[perm[cursor++]];
      Var loss;
      double penalty = 0.0;
      try {
        loss = sample_objective(model, s, cfg, SelectMode::train_relaxed, &penalty);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what(), static_cast<long>(step) - 1);
      }
      if (!std::isfinite(loss.item())) throw DivergenceError("training diverged: non-finite loss", static_cast<long>(step) - 1);
      loss_sum += loss.item();
      penalty_sum += penalty;
      backward(ops::scale(loss, 1.0 / static_cast<double>(cfg.batch)));
    }
    adam.step(params);
    for (const auto& p : params.items())
      if (!p.var.value().all_finite()) throw DivergenceError("training diverged in parameter " + p.name, static_cast<long>(step) - 1);
    report.step_loss.push_back(loss_sum / static_cast<double>(cfg.batch));
    report.step_penalty.push_back(penalty_sum / static_cast<double>(cfg.batch));
    if (cfg.log_every && step % cfg.log_every == 0) {
      std::clog << "step " << step << " loss " << report.step_loss.back() << " penalty " << report.step_penalty.back() << "\n";
    }
    if (step % steps_per_epoch == 0 || step == cfg.steps) {
      end_epoch(step);
      if (since_best >= cfg.patience && step < cfg.steps) {
        report.stopped_early = true;
        break;
      }
    }
  }
  params.zero_grad();
  import_parameters(params, best);
  return report;
}

}  // namespace lgr
