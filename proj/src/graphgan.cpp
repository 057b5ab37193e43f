#include "lgr/graphgan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "lgr/errors.hpp"
#include "lgr/gcndecode.hpp"
#include "lgr/init.hpp"
#include "lgr/ops.hpp"
#include "lgr/parallel.hpp"
#include "lgr/pgm.hpp"
#include "lgr/selftrain.hpp"

namespace lgr {

GanObjective parse_objective(const std::string& s) {
  if (s == "nonsaturating" || s == "vanilla" || s == "vanilla-nonsaturating") return GanObjective::nonsaturating;
  if (s == "literal" || s == "vanilla-literal") return GanObjective::literal;
  if (s == "wasserstein" || s == "wasserstein-clip") return GanObjective::wasserstein;
  throw ContractViolation("unknown GAN objective '" + s + "'");
}

std::string objective_name(GanObjective o) {
  switch (o) {
    case GanObjective::nonsaturating: return "vanilla-nonsaturating";
    case GanObjective::literal: return "vanilla-literal";
    case GanObjective::wasserstein: return "wasserstein-clip";
  }
  return "?";
}

void GanConfig::validate() const {
  if (latent == 0) throw ContractViolation("gan: latent size must be positive");
  if (objective == GanObjective::wasserstein && !(clip > 0.0)) throw ContractViolation("gan: clip bound must be positive");
  if (conditional && classes < 2) throw ContractViolation("gan: conditional mode needs at least two classes");
  if (batch == 0 || d_steps == 0) throw ContractViolation("gan: batch and d_steps must be positive");
  if (disc_dims.empty()) throw ContractViolation("gan: discriminator needs at least one layer");
}

GraphGan::GraphGan(std::size_t vertices, std::size_t dim, const GanConfig& config, FeatureStats stats)
    : config_(config), vertices_(vertices), dim_(dim), stats_(std::move(stats)), init_rng_(config.seed) {
  config_.validate();
  if (stats_.mean.size() != dim_ || stats_.sd.size() != dim_) throw ContractViolation("gan: feature stats width differs from D");
  std::size_t width = config_.latent;
  if (config_.conditional) {
    embedding_ = gen_params_.add("gen.embed", glorot_uniform({config_.classes, config_.embed}, config_.classes, config_.embed, init_rng_));
    width += config_.embed;
  }
  std::vector<std::size_t> widths = config_.gen_hidden;
  widths.push_back(vertices_ * dim_);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    gen_layers_.emplace_back(gen_params_, init_rng_, width, widths[l], "gen.fc" + std::to_string(l + 1));
    width = widths[l];
  }
  std::vector<std::size_t> dims{dim_};
  dims.insert(dims.end(), config_.disc_dims.begin(), config_.disc_dims.end());
  disc_body_ = GraphEncoder(disc_params_, init_rng_, dims, "disc");
  realism_head_ = Linear(disc_params_, init_rng_, dims.back(), 1, "disc.realism");
  if (config_.conditional) class_head_ = Linear(disc_params_, init_rng_, dims.back(), config_.classes, "disc.class");
}

std::vector<Var> GraphGan::generate(const Var& z, const std::vector<int>& labels) const {
  const Tensor& zv = z.value();
  if (zv.ndim() != 2 || zv.cols() != config_.latent) {
    throw ContractViolation("generator expects [B x " + std::to_string(config_.latent) + "] codes, got " + shape_str(z.shape()));
  }
  const std::size_t B = zv.rows();
  Var h = z;
  if (config_.conditional) {
    if (labels.size() != B) throw ContractViolation("generator: conditional mode needs one label per code");
    h = ops::concat({z, ops::matmul(constant(one_hot(labels, config_.classes)), embedding_)}, 1);
  }
  for (std::size_t l = 0; l < gen_layers_.size(); ++l) {
    h = gen_layers_[l](h);
    if (l + 1 < gen_layers_.size()) h = ops::leaky_relu(h, 0.2);
  }
  std::vector<Var> out;
  out.reserve(B);
  for (std::size_t b = 0; b < B; ++b) out.push_back(ops::reshape(B == 1 ? h : ops::slice(h, 0, b, b + 1), {vertices_, dim_}));
  return out;
}

GraphGan::Judgement GraphGan::judge(const Var& std_features, const GraphWeights& w) const {
  const Var e = disc_body_(std_features, w);
  Judgement j;
  j.realism = realism_head_(e);
  if (config_.conditional) j.class_logits = class_head_(e);
  return j;
}

GraphWeights GraphGan::fake_weights(const LgrModel& model, const Var& std_features, Var* raw_features) const {
  const Var raw = stats_.restore(std_features);
  if (raw_features) *raw_features = raw;
  return model.graph(raw, SelectMode::eval_hard).graph;
}

NamedTensors GraphGan::state() const {
  const GanConfig& c = config_;
  NamedTensors out;
  out.emplace_back("meta.gan", Tensor({14}, {static_cast<double>(c.latent), c.conditional ? 1.0 : 0.0, static_cast<double>(c.classes),
                                             static_cast<double>(c.embed), static_cast<double>(vertices_), static_cast<double>(dim_),
                                             static_cast<double>(c.objective), c.clip, static_cast<double>(c.d_steps),
                                             static_cast<double>(c.steps), static_cast<double>(c.batch), c.lr, c.beta1,
                                             static_cast<double>(c.seed)}));
  auto list = [](const std::vector<std::size_t>& v) {
    Tensor t({v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
    return t;
  };
  out.emplace_back("meta.gen_hidden", list(c.gen_hidden));
  out.emplace_back("meta.disc_dims", list(c.disc_dims));
  out.emplace_back("stats.mean", stats_.mean);
  out.emplace_back("stats.sd", stats_.sd);
  for (auto& e : export_parameters(gen_params_)) out.push_back(std::move(e));
  for (auto& e : export_parameters(disc_params_)) out.push_back(std::move(e));
  return out;
}

void GraphGan::save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }

std::unique_ptr<GraphGan> GraphGan::load(const std::filesystem::path& path) {
  const NamedTensors entries = read_checkpoint(path);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : entries)
      if (n == name) return t;
    throw IoError(path.string() + ": not a GAN checkpoint (missing " + name + ")");
  };
  const Tensor& m = find("meta.gan");
  if (m.size() != 14) throw IoError(path.string() + ": malformed GAN metadata");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(m[i]); };
  GanConfig c;
  c.latent = u(0);
  c.conditional = m[1] != 0.0;
  c.classes = u(2);
  c.embed = u(3);
  c.objective = static_cast<GanObjective>(u(6));
  c.clip = m[7];
  c.d_steps = u(8);
  c.steps = u(9);
  c.batch = u(10);
  c.lr = m[11];
  c.beta1 = m[12];
  c.seed = static_cast<std::uint64_t>(m[13]);
  auto list = [](const Tensor& t) {
    std::vector<std::size_t> v;
    for (double x : t.data()) v.push_back(static_cast<std::size_t>(x));
    return v;
  };
  c.gen_hidden = list(find("meta.gen_hidden"));
  c.disc_dims = list(find("meta.disc_dims"));
  auto gan = std::make_unique<GraphGan>(u(4), u(5), c, FeatureStats{find("stats.mean"), find("stats.sd")});
  import_parameters(gan->gen_params_, entries);
  import_parameters(gan->disc_params_, entries);
  return gan;
}

void GanReport::write_csv(std::ostream& out) const {
  out << "step,d_loss,g_loss\n";
  for (std::size_t i = 0; i < d_loss.size(); ++i) out << i + 1 << "," << d_loss[i] << "," << g_loss[i] << "\n";
}

void check_compatible(const GraphGan& gan, const LgrModel& model) {
  const auto& dc = model.decoder_config();
  const std::size_t V = dc.grid_h() * dc.grid_w(), D = dc.layer_dims.front();
  if (gan.vertices() != V || gan.dim() != D) {
    throw ContractViolation("checkpoint geometry mismatch: GAN produces " + std::to_string(gan.vertices()) + "x" +
                            std::to_string(gan.dim()) + " graphs, model expects " + std::to_string(V) + "x" + std::to_string(D));
  }
}

namespace {

Tensor normal_codes(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor z({rows, cols});
  for (double& x : z.data()) x = rng.normal();
  return z;
}

Var realism_loss(GanObjective o, const Var& score, bool real) {
  if (o == GanObjective::wasserstein) return real ? ops::scale(score, -1.0) : score;
  return ops::bce_with_logits(score, Tensor({1, 1}, real ? 1.0 : 0.0));
}

Var class_loss(const Var& logits, int label, std::size_t classes) {
  return ops::softmax_cross_entropy(logits, one_hot({label}, classes));
}

void check_finite(double v, const char* who, std::size_t step) {
  if (!std::isfinite(v)) throw DivergenceError(std::string("gan training diverged: non-finite ") + who + " loss", static_cast<long>(step) - 1);
}

}  // namespace

Var discriminator_objective(const GraphGan& gan, const Tensor& real_std, const LabeledGraph& real, const Var& fake_std,
                            const GraphWeights& fake_w, int fake_label) {
  const GanConfig& cfg = gan.config();
  const auto jr = gan.judge(constant(real_std), real.graph());
  const auto jf = gan.judge(fake_std, fake_w);
  Var loss = ops::add(realism_loss(cfg.objective, jr.realism, true), realism_loss(cfg.objective, jf.realism, false));
  if (cfg.conditional) {
    loss = ops::add(loss, ops::add(class_loss(jr.class_logits, real.label, cfg.classes), class_loss(jf.class_logits, fake_label, cfg.classes)));
  }
  return ops::reshape(loss, {});
}

Var generator_objective(const GraphGan& gan, const LgrModel& model, const Var& fake_std, int label) {
  const GanConfig& cfg = gan.config();
  const auto j = gan.judge(fake_std, gan.fake_weights(model, fake_std));
  Var loss;
  switch (cfg.objective) {
    case GanObjective::nonsaturating: loss = realism_loss(cfg.objective, j.realism, true); break;
    case GanObjective::literal: loss = ops::scale(realism_loss(cfg.objective, j.realism, false), -1.0); break;
    case GanObjective::wasserstein: loss = ops::scale(j.realism, -1.0); break;
  }
  if (cfg.conditional) loss = ops::add(loss, class_loss(j.class_logits, label, cfg.classes));
  return ops::reshape(loss, {});
}

GanReport train_gan(GraphGan& gan, const LgrModel& model, const std::vector<LabeledGraph>& real) {
  check_compatible(gan, model);
  const GanConfig& cfg = gan.config();
  if (real.empty()) throw ContractViolation("train_gan: no real graphs");
  std::vector<Tensor> real_std;
  for (const auto& g : real) {
    if (g.source != GraphSource::real) throw ContractViolation("train_gan: training set contains generated graphs");
    if (cfg.conditional && (g.label < 0 || static_cast<std::size_t>(g.label) >= cfg.classes)) {
      throw ContractViolation("train_gan: conditional mode needs labels in [0, classes)");
    }
    real_std.push_back(gan.stats().standardize(g.features));
  }
  Rng rng = Rng(cfg.seed).fork(20);
  Adam adam_d({.lr = cfg.lr, .beta1 = cfg.beta1}), adam_g({.lr = cfg.lr, .beta1 = cfg.beta1});
  const double inv_b = 1.0 / static_cast<double>(cfg.batch);
  GanReport report;

  auto draw_labels = [&] {
    std::vector<int> y;
    if (cfg.conditional)
      for (std::size_t b = 0; b < cfg.batch; ++b) y.push_back(static_cast<int>(rng.below(cfg.classes)));
    return y;
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    double d_total = 0.0;
    for (std::size_t k = 0; k < cfg.d_steps; ++k) {
      gan.discriminator_params().zero_grad();
      const std::vector<int> y = draw_labels();
      std::vector<Tensor> fake_f;
      std::vector<GraphWeights> fake_w;
      {
        NoGradGuard guard;
        for (const Var& f : gan.generate(constant(normal_codes(cfg.batch, cfg.latent, rng)), y)) {
          fake_f.push_back(f.value());
          GraphWeights w = gan.fake_weights(model, f);
          fake_w.push_back({constant(w.weights.value()), w.pattern});
        }
      }
      double d_loss = 0.0;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const std::size_t r = rng.below(real.size());
        const Var loss = discriminator_objective(gan, real_std[r], real[r], constant(fake_f[b]), fake_w[b], cfg.conditional ? y[b] : -1);
        d_loss += loss.item();
        backward(ops::scale(loss, inv_b));
      }
      check_finite(d_loss, "discriminator", step);
      adam_d.step(gan.discriminator_params());
      if (cfg.objective == GanObjective::wasserstein) {
        for (auto& p : gan.discriminator_params().items())
          for (double& x : p.var.mutable_value().data()) x = std::clamp(x, -cfg.clip, cfg.clip);
      }
      d_total += d_loss * inv_b;
    }

    gan.generator_params().zero_grad();
    const std::vector<int> y = draw_labels();
    const std::vector<Var> fakes = gan.generate(constant(normal_codes(cfg.batch, cfg.latent, rng)), y);
    Var g_loss = constant(Tensor::scalar(0.0));
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      g_loss = ops::add(g_loss, generator_objective(gan, model, fakes[b], cfg.conditional ? y[b] : -1));
    }
    g_loss = ops::scale(g_loss, inv_b);
    check_finite(g_loss.item(), "generator", step);
    backward(g_loss);
    adam_g.step(gan.generator_params());
    gan.discriminator_params().zero_grad();

    report.d_loss.push_back(d_total / static_cast<double>(cfg.d_steps));
    report.g_loss.push_back(g_loss.item());
    if (cfg.log_every && step % cfg.log_every == 0) {
      std::clog << "gan step " << step << " d " << report.d_loss.back() << " g " << report.g_loss.back() << "\n";
    }
  }
  return report;
}

double discriminator_accuracy(const GraphGan& gan, const LgrModel& model, const std::vector<LabeledGraph>& real, std::size_t count,
                              std::uint64_t seed) {
  check_compatible(gan, model);
  if (real.empty() || count == 0) throw ContractViolation("discriminator_accuracy: nothing to score");
  NoGradGuard guard;
  Rng rng = Rng(seed).fork(30);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& g = real[rng.below(real.size())];
    if (gan.judge(constant(gan.stats().standardize(g.features)), g.graph()).realism.item() > 0.0) ++correct;
  }
  const auto fakes = sample_graphs(gan, model, count, seed);
  for (const auto& f : fakes)
    if (gan.judge(constant(gan.stats().standardize(f.features)), f.graph()).realism.item() <= 0.0) ++correct;
  return static_cast<double>(correct) / static_cast<double>(2 * count);
}

Tensor latent_code(std::size_t latent, std::uint64_t seed, std::size_t index) {
  Rng rng = Rng(seed).fork(1000 + index);
  return normal_codes(1, latent, rng);
}

std::vector<LabeledGraph> sample_graphs(const GraphGan& gan, const LgrModel& model, std::size_t count, std::uint64_t seed,
                                        std::vector<int> labels) {
  check_compatible(gan, model);
  const GanConfig& cfg = gan.config();
  if (cfg.conditional) {
    if (labels.empty())
      for (std::size_t q = 0; q < count; ++q) labels.push_back(static_cast<int>(q % cfg.classes));
    if (labels.size() != count) throw ContractViolation("sample_graphs: need one label per sample");
  } else if (!labels.empty()) {
    throw ContractViolation("sample_graphs: labels given to an unconditional generator");
  }
  NoGradGuard guard;
  std::vector<LabeledGraph> out;
  out.reserve(count);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t n = std::min(kChunk, count - start);
    Tensor z({n, cfg.latent});
    std::vector<int> y;
    for (std::size_t q = 0; q < n; ++q) {
      const Tensor zq = latent_code(cfg.latent, seed, start + q);
      std::copy(zq.data().begin(), zq.data().end(), z.data().begin() + static_cast<long>(q * cfg.latent));
      if (cfg.conditional) y.push_back(labels[start + q]);
    }
    const auto feats = gan.generate(constant(z), y);
    for (std::size_t q = 0; q < n; ++q) {
      LabeledGraph g;
      Var raw;
      const GraphWeights w = gan.fake_weights(model, feats[q], &raw);
      g.features = raw.value();
      g.weights = w.weights.value();
      g.pattern = w.pattern;
      g.label = cfg.conditional ? y[q] : -1;
      g.source = GraphSource::generated;
      out.push_back(std::move(g));
    }
  }
  return out;
}

GeneratedSet sample_images(const GraphGan& gan, const LgrModel& model, std::size_t count, std::uint64_t seed, std::vector<int> labels) {
  GeneratedSet set;
  set.graphs = sample_graphs(gan, model, count, seed, std::move(labels));
  set.images.resize(set.graphs.size());
  parallel_for(set.graphs.size(), [&](std::size_t q) { set.images[q] = clamp_image(model.reconstruct(set.graphs[q].features)); });
  for (const auto& g : set.graphs) set.labels.push_back(g.label);
  return set;
}

void write_generated(const std::filesystem::path& dir, const GeneratedSet& set, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  manifest << "index,seed,label,path\n";
  for (std::size_t q = 0; q < set.images.size(); ++q) {
    std::ostringstream name;
    name << std::setw(5) << std::setfill('0') << q << ".pgm";
    write_pgm(dir / name.str(), set.images[q], 16);
    manifest << q << "," << seed << "," << set.labels[q] << "," << name.str() << "\n";
  }
}

}  // namespace lgr
