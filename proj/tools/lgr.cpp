// lgr: command-line driver for the latent graph representation pipeline.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "lgr/checks.hpp"
#include "lgr/errors.hpp"
#include "lgr/graphgan.hpp"
#include "lgr/metrics.hpp"
#include "lgr/pgm.hpp"
#include "lgr/selftrain.hpp"
#include "lgr/tasks.hpp"

namespace fs = std::filesystem;
using namespace lgr;

namespace {

struct SynthArgs {
  std::size_t count = 200, size = 64;
  std::uint64_t seed = 1;
  double noise = 0.02, opacity_fraction = 0.5;
  fs::path out;
};

struct FeatureArgs {
  fs::path data, out;
  std::size_t patch = 8, feature_dim = 64;
  std::string featurizer = "dct";
};

struct ReconArgs {
  fs::path data, mask_dir, feature_dir, out;
  std::string setup = "setup4", penalty = "separate", featurizer = "dct", aggregation = "mean";
  double alpha = 0.025, beta = -1.0, lr = 1e-3, slope = 0.2;
  std::size_t steps = 2000, batch = 8, patience = 5, patch = 8, feature_dim = 64, k_int = 12, dense_limit = 64, slots = 32;
  std::vector<std::size_t> layer_dims{96, 64, 32, 16, 8, 1};
  std::uint64_t seed = 1;
};

struct GanArgs {
  fs::path model, data, feature_dir, out;
  std::string objective = "nonsaturating";
  double clip = 0.01, lr = 2e-4, beta1 = 0.5;
  std::size_t d_steps = 3, latent = 128, steps = 2000, batch = 16, embed = 8;
  std::vector<std::size_t> gen_hidden{256, 512}, disc_dims{64, 32};
  bool conditional = false;
  std::uint64_t seed = 1;
};

struct GenerateArgs {
  fs::path model, gan, out;
  std::size_t count = 64;
  std::uint64_t seed = 1;
  std::optional<int> label;
};

struct TaskArgs {
  fs::path model, data, test, mask_dir, feature_dir, test_feature_dir, gan, out;
  std::size_t augment = 0, steps = 300, batch = 16;
  double lr = 1e-3;
  std::vector<std::size_t> dims{64, 32};
  std::uint64_t seed = 1, sample_seed = 1;
};

struct EvalArgs {
  std::string metric;
  fs::path set_a, set_b, model, classifier, segmenter, feature_dir;
};

struct ReportArgs {
  std::vector<fs::path> models, classifiers, segmenters;
  fs::path test, feature_dir, task_model, out;
};

Dataset load_data(const fs::path& dir, const fs::path& mask_dir = {}, const fs::path& feature_dir = {}) {
  if (dir.empty()) throw ContractViolation("a data directory is required");
  Dataset d = read_dataset(dir);
  if (!mask_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(mask_dir))
      if (e.path().extension() == ".pgm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.size() != d.size())
      throw IoError(mask_dir.string() + ": " + std::to_string(files.size()) + " masks for " + std::to_string(d.size()) + " images");
    d.masks.clear();
    for (const auto& f : files) d.masks.push_back(read_pgm_raw(f));
  }
  if (!feature_dir.empty()) attach_features(d, feature_dir);
  return d;
}

void prepare_out(const fs::path& dir, const CLI::App& cmd) {
  if (dir.empty()) throw ContractViolation("--out is required");
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved.toml");
  f << "# " << cmd.get_name() << "\n" << cmd.config_to_str(true, false);
  if (!f) throw IoError((dir / "resolved.toml").string() + ": write failed");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError(path.string() + ": cannot open for writing");
  f << std::setprecision(10);
  return f;
}

Featurizer parse_featurizer(const std::string& s) {
  if (s == "dct") return Featurizer::dct;
  if (s == "raw") return Featurizer::raw;
  if (s == "external") return Featurizer::external;
  throw ContractViolation("unknown featurizer '" + s + "'");
}

PenaltyReading parse_penalty(const std::string& s) {
  if (s == "separate") return PenaltyReading::separate;
  if (s == "masked") return PenaltyReading::masked;
  throw ContractViolation("unknown penalty reading '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "sum") return Aggregation::sum;
  throw ContractViolation("unknown aggregation '" + s + "'");
}

void run_synth(const SynthArgs& a, const CLI::App& cmd) {
  PhantomSpec spec;
  spec.size = a.size;
  spec.noise = a.noise;
  prepare_out(a.out, cmd);
  write_dataset(a.out, make_dataset(a.count, {1.0 - a.opacity_fraction, a.opacity_fraction}, spec, a.seed));
}

void run_features(const FeatureArgs& a, const CLI::App& cmd) {
  const Dataset d = load_data(a.data);
  PatchConfig pc{a.patch, parse_featurizer(a.featurizer), a.feature_dim};
  if (pc.featurizer == Featurizer::external) throw ContractViolation("features: external features are produced by the exporter");
  prepare_out(a.out, cmd);
  auto manifest = open_out(a.out / "manifest.csv");
  manifest << "index,image,features\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string name = d.names.empty() ? std::to_string(i) : d.names[i];
    write_tensor(a.out / (name + ".lgrt"), extract_patch_features(d.images[i], pc).features);
    manifest << i << "," << name << "," << name << ".lgrt\n";
  }
}

void run_train_recon(const ReconArgs& a, const CLI::App& cmd) {
  const Dataset d = load_data(a.data, a.mask_dir, a.feature_dir);
  if (d.size() == 0) throw ContractViolation("train-recon: empty dataset");
  TrainConfig tc;
  tc.setup = parse_setup(a.setup);
  tc.alpha = a.alpha;
  tc.beta = a.beta;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  tc.patience = a.patience;
  tc.penalty = parse_penalty(a.penalty);
  tc.log_every = 50;
  PatchConfig pc{a.patch, parse_featurizer(a.featurizer), a.feature_dim};
  DecoderConfig dc;
  dc.height = d.images[0].rows();
  dc.width = d.images[0].cols();
  dc.patch = a.patch;
  std::size_t in_dim = a.feature_dim;
  if (pc.featurizer == Featurizer::raw) in_dim = a.patch * a.patch;
  if (pc.featurizer == Featurizer::external) {
    if (d.feature_files.empty()) throw ContractViolation("train-recon: external featurizer needs --feature-dir");
    in_dim = read_tensor(d.feature_files[0]).cols();
    pc.feature_dim = in_dim;
  }
  dc.layer_dims = {in_dim};
  dc.layer_dims.insert(dc.layer_dims.end(), a.layer_dims.begin(), a.layer_dims.end());
  dc.slope = a.slope;
  dc.k_int = a.k_int;
  dc.dense_limit = a.dense_limit;
  dc.slots = a.slots;
  dc.aggregation = parse_aggregation(a.aggregation);
  dc.weight_mode = tc.setup == Setup::binary_noreg ? WeightMode::binary : WeightMode::product;
  LgrModel model(pc, dc, a.seed);
  prepare_out(a.out, cmd);
  const TrainReport report = train_lgr(model, d, tc);
  model.save(a.out / "model.lgrc");
  auto steps = open_out(a.out / "steps.csv");
  auto epochs = open_out(a.out / "epochs.csv");
  report.write_csv(steps, epochs);
  std::cerr << "best epoch " << report.best_epoch << (report.stopped_early ? " (early stop)" : "") << "\n";
}

std::unique_ptr<LgrModel> load_model(const fs::path& path) {
  if (path.empty()) throw ContractViolation("--model is required");
  return LgrModel::load(path);
}

void run_train_gan(const GanArgs& a, const CLI::App& cmd) {
  auto model = load_model(a.model);
  const Dataset d = load_data(a.data, {}, a.feature_dir);
  const auto real = build_graphs(*model, d);
  GanConfig gc;
  gc.objective = parse_objective(a.objective);
  gc.clip = a.clip;
  gc.d_steps = a.d_steps;
  gc.latent = a.latent;
  gc.conditional = a.conditional;
  gc.embed = a.embed;
  gc.gen_hidden = a.gen_hidden;
  gc.disc_dims = a.disc_dims;
  gc.steps = a.steps;
  gc.batch = a.batch;
  gc.lr = a.lr;
  gc.beta1 = a.beta1;
  gc.seed = a.seed;
  gc.log_every = 50;
  if (gc.conditional) {
    int top = 0;
    for (const auto& g : real) {
      if (g.label < 0) throw ContractViolation("train-gan: conditional training needs labelled data");
      top = std::max(top, g.label);
    }
    gc.classes = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
  }
  gc.validate();
  prepare_out(a.out, cmd);
  GraphGan gan(model->decoder_config().grid_h() * model->decoder_config().grid_w(), model->decoder_config().layer_dims[0], gc,
               FeatureStats::fit(real));
  const GanReport report = train_gan(gan, *model, real);
  gan.save(a.out / "gan.lgrc");
  auto losses = open_out(a.out / "losses.csv");
  report.write_csv(losses);
}

void run_generate(const GenerateArgs& a, const CLI::App& cmd) {
  auto model = load_model(a.model);
  if (a.gan.empty()) throw ContractViolation("--gan is required");
  auto gan = GraphGan::load(a.gan);
  check_compatible(*gan, *model);
  std::vector<int> labels;
  if (a.label) labels.assign(a.count, *a.label);
  prepare_out(a.out, cmd);
  write_generated(a.out, sample_images(*gan, *model, a.count, a.seed, labels), a.seed);
}

std::vector<LabeledGraph> augmented(const TaskArgs& a, const LgrModel& model, std::vector<LabeledGraph> real) {
  if (a.augment == 0) return real;
  if (a.gan.empty()) throw ContractViolation("--augment needs --gan");
  auto gan = GraphGan::load(a.gan);
  check_compatible(*gan, model);
  auto fake = sample_graphs(*gan, model, a.augment, a.sample_seed);
  real.insert(real.end(), fake.begin(), fake.end());
  return real;
}

void write_classification(std::ostream& out, const ClassificationMetrics& m) {
  out << "count,accuracy,f1,sensitivity,precision,auc\n"
      << m.count << "," << m.accuracy << "," << m.f1 << "," << m.sensitivity << "," << m.precision << ",";
  if (m.auc) out << *m.auc;
  out << "\n";
}

void run_train_cls(const TaskArgs& a, const CLI::App& cmd) {
  auto model = load_model(a.model);
  const Dataset d = load_data(a.data, {}, a.feature_dir);
  const auto train = augmented(a, *model, build_graphs(*model, d));
  for (const auto& g : train)
    if (g.label < 0) throw ContractViolation("train-cls: every training graph needs a label");
  ClassifierConfig cc;
  cc.dims = a.dims;
  cc.steps = a.steps;
  cc.batch = a.batch;
  cc.lr = a.lr;
  cc.seed = a.seed;
  cc.log_every = 50;
  int top = 1;
  for (const auto& g : train) top = std::max(top, g.label);
  cc.classes = static_cast<std::size_t>(top) + 1;
  prepare_out(a.out, cmd);
  TaskReport report;
  auto clf = train_classifier(train, model->decoder_config().layer_dims[0], cc, &report);
  clf->save(a.out / "classifier.lgrc");
  auto losses = open_out(a.out / "losses.csv");
  report.write_csv(losses);
  if (!a.test.empty()) {
    const auto test = build_graphs(*model, load_data(a.test, {}, a.test_feature_dir));
    auto metrics = open_out(a.out / "metrics.csv");
    write_classification(metrics, evaluate_classification(*clf, test));
  }
}

std::vector<SegSample> seg_samples(const LgrModel& model, const Dataset& d) {
  if (!d.has_masks()) throw ContractViolation("segmentation needs masks");
  const auto graphs = build_graphs(model, d);
  std::vector<SegSample> out;
  for (std::size_t i = 0; i < graphs.size(); ++i) out.push_back(segmentation_sample(model, graphs[i], d.masks[i]));
  return out;
}

void write_segmentation(std::ostream& out, const SegmentationMetrics& m) {
  out << "class,dice\n";
  for (std::size_t c = 0; c < m.dice.size(); ++c) out << c + 1 << "," << m.dice[c] << "\n";
  out << "mean," << m.mean_dice << "\n";
}

void run_train_seg(const TaskArgs& a, const CLI::App& cmd) {
  auto model = load_model(a.model);
  const Dataset d = load_data(a.data, a.mask_dir, a.feature_dir);
  if (!d.has_masks()) throw ContractViolation("train-seg: the training set has no masks");
  const auto real = build_graphs(*model, d);
  std::vector<SegSample> train;
  for (std::size_t i = 0; i < real.size(); ++i) train.push_back(segmentation_sample(*model, real[i], d.masks[i]));
  TaskArgs only_fake = a;
  const auto all = augmented(only_fake, *model, {});
  for (const auto& g : all) train.push_back(segmentation_sample(*model, g, d.masks[nearest_real(g, real)]));
  SegmenterConfig sc;
  sc.steps = a.steps;
  sc.batch = a.batch;
  sc.lr = a.lr;
  sc.seed = a.seed;
  sc.log_every = 50;
  int top = 0;
  for (const auto& m : d.masks)
    for (double v : m.data()) top = std::max(top, static_cast<int>(v));
  sc.classes = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
  prepare_out(a.out, cmd);
  TaskReport report;
  auto seg = train_segmenter(train, model->decoder_config(), sc, &report);
  seg->save(a.out / "segmenter.lgrc");
  auto losses = open_out(a.out / "losses.csv");
  report.write_csv(losses);
  if (!a.test.empty()) {
    auto metrics = open_out(a.out / "metrics.csv");
    write_segmentation(metrics, evaluate_segmentation(*seg, seg_samples(*model, load_data(a.test, {}, a.test_feature_dir))));
  }
}

std::vector<LgrSample> recon_samples(const LgrModel& model, const fs::path& dir, const fs::path& feature_dir) {
  return prepare_samples(model, load_data(dir, {}, feature_dir));
}

void run_eval(const EvalArgs& a) {
  std::cout << std::setprecision(10);
  if (a.metric == "fid" || a.metric == "rmse-nearest") {
    if (a.set_a.empty() || a.set_b.empty()) throw ContractViolation("eval: --set-a and --set-b are required");
    const Dataset x = read_dataset(a.set_a), y = read_dataset(a.set_b);
    std::cout << (a.metric == "fid" ? fid(x.images, y.images) : rmse_nearest(x.images, y.images)) << "\n";
  } else if (a.metric == "psnr") {
    const auto model = load_model(a.model);
    const EvalSummary s = psnr_eval(*model, recon_samples(*model, a.set_a, a.feature_dir));
    std::cout << s.psnr << "\n";
  } else if (a.metric == "classification") {
    const auto model = load_model(a.model);
    if (a.classifier.empty()) throw ContractViolation("eval: --classifier is required");
    const auto clf = GraphClassifier::load(a.classifier);
    write_classification(std::cout, evaluate_classification(*clf, build_graphs(*model, load_data(a.set_a, {}, a.feature_dir))));
  } else if (a.metric == "segmentation") {
    const auto model = load_model(a.model);
    if (a.segmenter.empty()) throw ContractViolation("eval: --segmenter is required");
    const auto seg = Segmenter::load(a.segmenter);
    write_segmentation(std::cout, evaluate_segmentation(*seg, seg_samples(*model, load_data(a.set_a, {}, a.feature_dir))));
  } else {
    throw ContractViolation("eval: unknown metric '" + a.metric + "'");
  }
}

int run_gradcheck() {
  bool ok = true;
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& line : gradient_suite()) {
    const bool pass = line.max_rel_error <= 1e-4;
    ok = ok && pass;
    std::cout << std::left << std::setw(44) << line.name << " " << line.max_rel_error << " " << line.checked << (pass ? "" : " FAIL")
              << "\n";
  }
  return ok ? 0 : 1;
}

void run_report(const ReportArgs& a, const CLI::App& cmd) {
  prepare_out(a.out, cmd);
  if (!a.models.empty()) {
    auto out = open_out(a.out / "reconstruction.csv");
    out << "checkpoint,psnr,psnr_fg,total_edges,foreground_edges,background_edges,total_percent,foreground_percent\n";
    for (const auto& path : a.models) {
      const auto model = LgrModel::load(path);
      const EvalSummary s = psnr_eval(*model, recon_samples(*model, a.test, a.feature_dir));
      out << path.string() << "," << s.psnr << "," << s.psnr_fg << "," << s.total_edges << "," << s.foreground_edges << ","
          << s.background_edges << "," << s.total_percent << "," << s.foreground_percent << "\n";
    }
  }
  if (a.classifiers.empty() && a.segmenters.empty()) return;
  const auto model = load_model(a.task_model);
  const Dataset test = load_data(a.test, {}, a.feature_dir);
  if (!a.classifiers.empty()) {
    const auto graphs = build_graphs(*model, test);
    auto out = open_out(a.out / "classification.csv");
    out << "checkpoint,count,accuracy,f1,sensitivity,precision,auc\n";
    for (const auto& path : a.classifiers) {
      const auto m = evaluate_classification(*GraphClassifier::load(path), graphs);
      out << path.string() << "," << m.count << "," << m.accuracy << "," << m.f1 << "," << m.sensitivity << "," << m.precision << ",";
      if (m.auc) out << *m.auc;
      out << "\n";
    }
  }
  if (!a.segmenters.empty()) {
    const auto samples = seg_samples(*model, test);
    auto out = open_out(a.out / "segmentation.csv");
    out << "checkpoint,mean_dice\n";
    for (const auto& path : a.segmenters) out << path.string() << "," << evaluate_segmentation(*Segmenter::load(path), samples).mean_dice << "\n";
  }
}

// Flat keys in the config file belong to the subcommand being run.
class SubcommandToml : public CLI::ConfigTOML {
 public:
  std::string subcommand;

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigTOML::from_config(input);
    if (!subcommand.empty())
      for (auto& item : items) item.parents.insert(item.parents.begin(), subcommand);
    return items;
  }
};

CLI::App* subcommand(CLI::App& app, const std::string& name, const std::string& about) {
  CLI::App* cmd = app.add_subcommand(name, about);
  cmd->option_defaults()->always_capture_default();
  return cmd;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent graph representation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  auto toml = std::make_shared<SubcommandToml>();
  app.config_formatter(toml);
  app.set_config("--config", "", "TOML file with option values; flags take precedence");
  app.allow_config_extras(false);

  SynthArgs synth;
  auto* c_synth = subcommand(app, "synth", "Write a synthetic phantom dataset");
  c_synth->add_option("--count", synth.count);
  c_synth->add_option("--size", synth.size);
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--noise", synth.noise);
  c_synth->add_option("--opacity-fraction", synth.opacity_fraction);
  c_synth->add_option("--out", synth.out)->required();

  FeatureArgs feat;
  auto* c_feat = subcommand(app, "features", "Write per-image patch feature tensors");
  c_feat->add_option("--data-dir", feat.data)->required();
  c_feat->add_option("--patch", feat.patch);
  c_feat->add_option("--featurizer", feat.featurizer);
  c_feat->add_option("--feature-dim", feat.feature_dim);
  c_feat->add_option("--out", feat.out)->required();

  ReconArgs rec;
  auto* c_rec = subcommand(app, "train-recon", "Train the graph encoder and decoder");
  c_rec->add_option("--data-dir", rec.data)->required();
  c_rec->add_option("--mask-dir", rec.mask_dir);
  c_rec->add_option("--feature-dir", rec.feature_dir);
  c_rec->add_option("--out", rec.out)->required();
  c_rec->add_option("--setup", rec.setup);
  c_rec->add_option("--alpha", rec.alpha);
  c_rec->add_option("--beta", rec.beta, "negative: derived from the setup");
  c_rec->add_option("--penalty", rec.penalty, "separate or masked");
  c_rec->add_option("--steps", rec.steps);
  c_rec->add_option("--batch", rec.batch);
  c_rec->add_option("--lr", rec.lr);
  c_rec->add_option("--seed", rec.seed);
  c_rec->add_option("--patience", rec.patience);
  c_rec->add_option("--patch", rec.patch);
  c_rec->add_option("--featurizer", rec.featurizer);
  c_rec->add_option("--feature-dim", rec.feature_dim);
  c_rec->add_option("--layer-dims", rec.layer_dims, "widths after the input layer")->delimiter(',');
  c_rec->add_option("--slope", rec.slope);
  c_rec->add_option("--k-int", rec.k_int);
  c_rec->add_option("--dense-limit", rec.dense_limit);
  c_rec->add_option("--slots", rec.slots);
  c_rec->add_option("--aggregation", rec.aggregation);

  GanArgs gan;
  auto* c_gan = subcommand(app, "train-gan", "Train a GAN on the graphs of a frozen model");
  c_gan->add_option("--model", gan.model)->required();
  c_gan->add_option("--data-dir", gan.data)->required();
  c_gan->add_option("--feature-dir", gan.feature_dir);
  c_gan->add_option("--out", gan.out)->required();
  c_gan->add_option("--objective", gan.objective, "nonsaturating, literal or wasserstein");
  c_gan->add_option("--clip", gan.clip);
  c_gan->add_option("--d-steps", gan.d_steps);
  c_gan->add_option("--latent", gan.latent);
  c_gan->add_flag("--conditional", gan.conditional);
  c_gan->add_option("--embed", gan.embed);
  c_gan->add_option("--gen-hidden", gan.gen_hidden)->delimiter(',');
  c_gan->add_option("--disc-dims", gan.disc_dims)->delimiter(',');
  c_gan->add_option("--steps", gan.steps);
  c_gan->add_option("--batch", gan.batch);
  c_gan->add_option("--lr", gan.lr);
  c_gan->add_option("--beta1", gan.beta1);
  c_gan->add_option("--seed", gan.seed);

  GenerateArgs gen;
  auto* c_gen = subcommand(app, "generate", "Decode GAN samples to images");
  c_gen->add_option("--model", gen.model)->required();
  c_gen->add_option("--gan", gen.gan)->required();
  c_gen->add_option("--count", gen.count);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--label", gen.label);
  c_gen->add_option("--out", gen.out)->required();

  TaskArgs cls;
  TaskArgs seg;
  seg.batch = 4;
  seg.steps = 1000;
  seg.lr = 1e-2;
  auto* c_cls = subcommand(app, "train-cls", "Train a graph classifier");
  auto* c_seg = subcommand(app, "train-seg", "Train a graph segmenter");
  for (auto [cmd, t] : {std::pair{c_cls, &cls}, std::pair{c_seg, &seg}}) {
    cmd->add_option("--model", t->model)->required();
    cmd->add_option("--data-dir", t->data)->required();
    cmd->add_option("--feature-dir", t->feature_dir);
    cmd->add_option("--test-dir", t->test);
    cmd->add_option("--test-feature-dir", t->test_feature_dir);
    cmd->add_option("--gan", t->gan);
    cmd->add_option("--augment", t->augment, "generated graphs added to the training set");
    cmd->add_option("--sample-seed", t->sample_seed);
    cmd->add_option("--steps", t->steps);
    cmd->add_option("--batch", t->batch);
    cmd->add_option("--lr", t->lr);
    cmd->add_option("--seed", t->seed);
    cmd->add_option("--out", t->out)->required();
  }
  c_cls->add_option("--dims", cls.dims)->delimiter(',');
  c_seg->add_option("--mask-dir", seg.mask_dir);

  EvalArgs ev;
  auto* c_eval = subcommand(app, "eval", "Evaluate a metric");
  c_eval->add_option("--metric", ev.metric, "fid, rmse-nearest, psnr, classification or segmentation")->required();
  c_eval->add_option("--set-a", ev.set_a);
  c_eval->add_option("--set-b", ev.set_b);
  c_eval->add_option("--model", ev.model);
  c_eval->add_option("--classifier", ev.classifier);
  c_eval->add_option("--segmenter", ev.segmenter);
  c_eval->add_option("--feature-dir", ev.feature_dir);

  auto* c_grad = subcommand(app, "gradcheck", "Finite-difference check of every differentiable operation");

  ReportArgs rep;
  auto* c_rep = subcommand(app, "report", "Tables from saved checkpoints");
  c_rep->add_option("--model", rep.models, "reconstruction checkpoints");
  c_rep->add_option("--classifier", rep.classifiers);
  c_rep->add_option("--segmenter", rep.segmenters);
  c_rep->add_option("--task-model", rep.task_model, "model whose graphs feed the task checkpoints");
  c_rep->add_option("--test-dir", rep.test)->required();
  c_rep->add_option("--feature-dir", rep.feature_dir);
  c_rep->add_option("--out", rep.out)->required();

  for (int i = 1; i < argc; ++i)
    if (app.get_subcommand_no_throw(argv[i]) != nullptr) {
      toml->subcommand = argv[i];
      break;
    }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*c_synth) run_synth(synth, *c_synth);
    if (*c_feat) run_features(feat, *c_feat);
    if (*c_rec) run_train_recon(rec, *c_rec);
    if (*c_gan) run_train_gan(gan, *c_gan);
    if (*c_gen) run_generate(gen, *c_gen);
    if (*c_cls) run_train_cls(cls, *c_cls);
    if (*c_seg) run_train_seg(seg, *c_seg);
    if (*c_eval) run_eval(ev);
    if (*c_grad) return run_gradcheck();
    if (*c_rep) run_report(rep, *c_rep);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (last finite step " << e.last_finite_step() << ")\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
