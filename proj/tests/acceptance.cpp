// Acceptance run: one PASS/FAIL line per criterion on standard output,
// progress on standard error. Exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "lgr/checks.hpp"
#include "lgr/gcndecode.hpp"
#include "lgr/graphgan.hpp"
#include "lgr/metrics.hpp"
#include "lgr/pgm.hpp"
#include "lgr/selftrain.hpp"
#include "lgr/tasks.hpp"

#ifndef LGR_CLI
#define LGR_CLI "lgr"
#endif

namespace fs = std::filesystem;
using namespace lgr;

namespace {

int failures = 0;

void report(int n, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << n << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

// Shared synthetic data: 200 training images, 100 test images.
struct Corpus {
  Dataset train, test;
};

Corpus corpus() {
  const Dataset all = make_dataset(300, {0.5, 0.5}, PhantomSpec{}, 7);
  std::vector<std::size_t> a(200), b(100);
  for (std::size_t i = 0; i < 200; ++i) a[i] = i;
  for (std::size_t i = 0; i < 100; ++i) b[i] = 200 + i;
  return {subset(all, a), subset(all, b)};
}

std::unique_ptr<LgrModel> fresh_model(Setup setup, std::uint64_t seed) {
  DecoderConfig dc;
  dc.weight_mode = setup == Setup::binary_noreg ? WeightMode::binary : WeightMode::product;
  return std::make_unique<LgrModel>(PatchConfig{}, dc, seed);
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string name;
  for (const auto& line : gradient_suite()) {
    if (!(line.max_rel_error <= worst)) {
      worst = line.max_rel_error;
      name = line.name;
    }
  }
  const double t = seconds_since(t0);
  report(1, worst <= 1e-4 && t <= 120.0, "worst relative error " + fmt(worst) + " (" + name + "), " + fmt(t, 3) + " s");
}

void criterion2() {
  Rng rng(101);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t v = 1 + rng.below(8), din = 1 + rng.below(6), dout = 1 + rng.below(5);
    Tensor w({v, v});
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = i + 1; j < v; ++j) w(i, j) = w(j, i) = rng.uniform() < 0.5 ? rng.uniform() : 0.0;
    const Tensor f = random_matrix(v, din, rng), u = random_matrix(din, dout, rng), b = random_matrix(din, dout, rng);
    const double slope = trial % 3 == 0 ? -1.0 : 0.2;
    const Aggregation mode = trial % 2 ? Aggregation::mean : Aggregation::sum;
    const Tensor got = gcn_layer(constant(f), {constant(w), nullptr}, constant(u), constant(b), slope, mode).value();
    for (std::size_t i = 0; i < v; ++i) {
      double deg = 0;
      for (std::size_t j = 0; j < v; ++j) deg += w(i, j) > 0;
      for (std::size_t o = 0; o < dout; ++o) {
        double z = 0;
        for (std::size_t k = 0; k < din; ++k) {
          double agg = 0;
          for (std::size_t j = 0; j < v; ++j) agg += w(i, j) * f(j, k);
          if (mode == Aggregation::mean) agg /= std::max(1.0, deg);
          z += f(i, k) * u(k, o) + agg * b(k, o);
        }
        const double want = slope < 0 ? z : (z > 0 ? z : slope * z);
        worst = std::max(worst, std::abs(got(i, o) - want));
      }
    }
  }
  report(2, worst <= 1e-10, "max |layer - oracle| " + fmt(worst) + " over 100 graphs");
}

void criterion3() {
  Rng rng(102);
  double sum_err = 0, const_err = 0;
  bool bounded = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t gh = 1 + rng.below(6), gw = 1 + rng.below(6), k = 1 + rng.below(std::min<std::size_t>(12, gh * gw));
    auto cells = canonical_cells(gh, gw);
    for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[rng.below(i)]);
    const auto table = idw_table(cells, gh, gw, k);
    const Tensor f = random_matrix(gh * gw, 1, rng);
    const Tensor up = upsample_idw(constant(f), cells, gh, gw, k).value();
    const double level = rng.uniform(-2.0, 2.0);
    const Tensor c = upsample_idw(constant(Tensor({gh * gw, 1}, level)), cells, gh, gw, k).value();
    for (std::size_t n = 0; n < table->out_count(); ++n) {
      double s = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t t = table->offset[n]; t < table->offset[n + 1]; ++t) {
        s += table->weight[t];
        lo = std::min(lo, f[table->src[t]]);
        hi = std::max(hi, f[table->src[t]]);
      }
      sum_err = std::max(sum_err, std::abs(s - 1.0));
      const_err = std::max(const_err, std::abs(c[n] - level));
      if (up[n] < lo || up[n] > hi) bounded = false;
    }
  }
  report(3, sum_err <= 1e-9 && const_err == 0.0 && bounded,
         "weight-sum error " + fmt(sum_err) + ", constant-field error " + fmt(const_err) + ", bounded " + (bounded ? "yes" : "no"));
}

struct SparsityRun {
  double total_edges, fg_percent, psnr;
};

SparsityRun sparsity_run(const Corpus& c, Setup setup, double alpha, std::uint64_t seed) {
  auto model = fresh_model(setup, seed);
  TrainConfig tc;
  tc.setup = setup;
  tc.alpha = alpha;
  tc.beta = setup == Setup::foreground_priority ? 12 * alpha : alpha;
  tc.steps = 300;
  tc.seed = seed;
  train_lgr(*model, c.train, tc);
  const EvalSummary s = psnr_eval(*model, prepare_samples(*model, c.test));
  std::cerr << "  " << setup_name(setup) << " alpha " << alpha << " seed " << seed << ": edges " << s.total_edges << ", fg% "
            << s.foreground_percent << ", psnr " << s.psnr << "\n";
  return {s.total_edges, s.foreground_percent, s.psnr};
}

void criteria4and5(const Corpus& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> alphas{0.005, 0.025, 0.1};
  std::vector<double> med;
  std::vector<double> fg4;
  for (double alpha : alphas) {
    std::vector<double> edges;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const SparsityRun r = sparsity_run(c, Setup::foreground_priority, alpha, seed);
      edges.push_back(r.total_edges);
      if (alpha == 0.025) fg4.push_back(r.fg_percent);
    }
    med.push_back(median(edges));
  }
  const double t = seconds_since(t0);
  const bool decreasing = med[0] > med[1] && med[1] > med[2];
  report(4, decreasing && t <= 1800.0,
         "median edges " + fmt(med[0]) + " > " + fmt(med[1]) + " > " + fmt(med[2]) + " required, " + fmt(t, 4) + " s");

  std::vector<double> fg3;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) fg3.push_back(sparsity_run(c, Setup::uniform_sparsity, 0.025, seed).fg_percent);
  const double m3 = median(fg3), m4 = median(fg4);
  report(5, m4 > 0.0 && m4 >= 1.5 * m3, "foreground edge % setup3 " + fmt(m3) + ", setup4 " + fmt(m4) + " (need >= 1.5x)");
}

std::unique_ptr<LgrModel> criterion6(const Corpus& c) {
  const auto t0 = std::chrono::steady_clock::now();
  auto model = fresh_model(Setup::foreground_priority, 1);
  TrainConfig tc;
  tc.steps = 2000;
  tc.log_every = 100;
  const TrainReport r = train_lgr(*model, c.train, tc);
  const EvalSummary s = psnr_eval(*model, prepare_samples(*model, c.test));
  const double t = seconds_since(t0);
  report(6, s.psnr >= 24.0 && t <= 1200.0,
         "test PSNR " + fmt(s.psnr) + " dB after " + std::to_string(r.step_loss.size()) + " steps, " + fmt(t, 4) + " s");
  return model;
}

void criterion7(const Corpus& c) {
  std::vector<Tensor> a(c.train.images.begin(), c.train.images.begin() + 60);
  std::vector<Tensor> b(c.test.images.begin(), c.test.images.begin() + 60);
  const double self = fid(a, a), asym = std::abs(fid(a, b) - fid(b, a));
  const Tensor& m = c.train.masks[0];
  Tensor other(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) other[i] = m[i] == double(kHeart) ? 0.0 : double(kHeart);
  const double d_same = dice(m, m, kHeart), d_disjoint = dice(m, other, kHeart);
  std::vector<Tensor> part(a.begin() + 10, a.begin() + 30);
  const double r = rmse_nearest(part, a);
  report(7, self <= 1e-6 && asym <= 1e-8 && d_same == 1.0 && d_disjoint == 0.0 && r == 0.0,
         "fid(A,A) " + fmt(self) + ", |fid asymmetry| " + fmt(asym) + ", dice " + fmt(d_same) + "/" + fmt(d_disjoint) +
             ", rmse_nearest(subset) " + fmt(r));
}

std::unique_ptr<GraphGan> train_gan_for(const LgrModel& model, const std::vector<LabeledGraph>& real, bool conditional) {
  GanConfig gc;
  gc.steps = 600;
  gc.conditional = conditional;
  gc.log_every = 100;
  auto gan = std::make_unique<GraphGan>(real[0].features.rows(), real[0].features.cols(), gc, FeatureStats::fit(real));
  train_gan(*gan, model, real);
  return gan;
}

void criterion8(const Corpus& c, const LgrModel& model, const std::vector<LabeledGraph>& real) {
  const auto t0 = std::chrono::steady_clock::now();
  auto gan = train_gan_for(model, real, false);
  const GeneratedSet gen = sample_images(*gan, model, 200, 99);
  double mean = 0, sq = 0, n = 0;
  for (const auto& x : c.train.images)
    for (double v : x.data()) {
      mean += v;
      sq += v * v;
      ++n;
    }
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  Rng rng(5);
  std::vector<Tensor> noise;
  for (int i = 0; i < 200; ++i) {
    Tensor t({64, 64});
    for (double& v : t.data()) v = rng.normal(mean, sd);
    noise.push_back(std::move(t));
  }
  std::vector<Tensor> recon;
  for (const auto& g : real) recon.push_back(clamp_image(model.reconstruct(g.features)));
  const double f_gen = fid(gen.images, c.train.images), f_noise = fid(noise, c.train.images);
  const double r_gen = rmse_nearest(gen.images, c.train.images), r_rec = rmse_nearest(recon, c.train.images);
  const double t = seconds_since(t0);
  report(8, f_gen <= 0.5 * f_noise && r_gen > r_rec && t <= 3600.0,
         "FID generated " + fmt(f_gen) + " vs noise " + fmt(f_noise) + "; rmse_nearest generated " + fmt(r_gen) + " vs reconstructions " +
             fmt(r_rec) + ", " + fmt(t, 4) + " s");
}

void criterion9(const Corpus& c, const LgrModel& model, const std::vector<LabeledGraph>& real) {
  auto gan = train_gan_for(model, real, true);
  const auto test_graphs = build_graphs(model, c.test);
  std::vector<SegSample> seg_train, seg_test;
  for (std::size_t i = 0; i < real.size(); ++i) seg_train.push_back(segmentation_sample(model, real[i], c.train.masks[i]));
  for (std::size_t i = 0; i < test_graphs.size(); ++i) seg_test.push_back(segmentation_sample(model, test_graphs[i], c.test.masks[i]));
  std::vector<double> acc0, acc1, dice0, dice1;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ClassifierConfig cc;
    cc.seed = seed;
    const std::size_t dim = real[0].features.cols();
    acc0.push_back(evaluate_classification(*train_classifier(real, dim, cc), test_graphs).accuracy);
    auto train = real;
    const auto fake = sample_graphs(*gan, model, 256, 1000 + seed);
    train.insert(train.end(), fake.begin(), fake.end());
    acc1.push_back(evaluate_classification(*train_classifier(train, dim, cc), test_graphs).accuracy);

    SegmenterConfig sc;
    sc.seed = seed;
    dice0.push_back(evaluate_segmentation(*train_segmenter(seg_train, model.decoder_config(), sc), seg_test).mean_dice);
    auto seg_aug = seg_train;
    for (const auto& g : sample_graphs(*gan, model, 128, 2000 + seed))
      seg_aug.push_back(segmentation_sample(model, g, c.train.masks[nearest_real(g, real)]));
    dice1.push_back(evaluate_segmentation(*train_segmenter(seg_aug, model.decoder_config(), sc), seg_test).mean_dice);
    std::cerr << "  seed " << seed << ": acc " << acc0.back() << " -> " << acc1.back() << ", dice " << dice0.back() << " -> "
              << dice1.back() << "\n";
  }
  const double a0 = median(acc0), a1 = median(acc1), d0 = median(dice0), d1 = median(dice1);
  report(9, a1 >= a0 && d1 >= d0,
         "median ACC " + fmt(a0) + " -> " + fmt(a1) + " (Q=256), median DICE " + fmt(d0) + " -> " + fmt(d1) + " (Q=128)");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LGR_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion10(const Corpus& c, const LgrModel& model) {
  const fs::path dir = fs::temp_directory_path() / ("lgr_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  model.save(dir / "model.lgrc");
  const auto loaded = LgrModel::load(dir / "model.lgrc");
  const auto a = psnr_eval(model, prepare_samples(model, c.test)), b = psnr_eval(*loaded, prepare_samples(*loaded, c.test));
  bool identical = a.per_image_psnr == b.per_image_psnr && a.total_edges == b.total_edges;
  for (std::size_t i = 0; i < 5; ++i) {
    const FeatureMatrix f = model.features(c.test.images[i]);
    identical = identical && model.reconstruct(f.features) == loaded->reconstruct(f.features);
  }

  // Truncated PGM in an image directory; truncated LGRT as an external feature file.
  const fs::path pgm_dir = dir / "pgm", lgrt_dir = dir / "lgrt", good = dir / "good";
  fs::create_directories(pgm_dir);
  fs::create_directories(lgrt_dir);
  fs::create_directories(good);
  write_pgm(good / "a.pgm", c.test.images[0], 16);
  auto bytes = read_file(good / "a.pgm");
  bytes.resize(bytes.size() / 2);
  write_file(pgm_dir / "a.pgm", bytes);
  write_tensor(dir / "f.lgrt", model.features(c.test.images[0]).features);
  bytes = read_file(dir / "f.lgrt");
  bytes.resize(bytes.size() - 9);
  write_file(lgrt_dir / "a.lgrt", bytes);
  const int pgm_code = run_cli("eval --metric fid --set-a " + pgm_dir.string() + " --set-b " + good.string());
  const int lgrt_code = run_cli("train-recon --data-dir " + good.string() + " --featurizer external --feature-dir " + lgrt_dir.string() +
                                " --steps 1 --out " + (dir / "out").string());
  fs::remove_all(dir);
  report(10, identical && pgm_code == 2 && lgrt_code == 2,
         std::string("reloaded evaluation ") + (identical ? "bit-identical" : "differs") + "; exit codes truncated PGM " +
             std::to_string(pgm_code) + ", truncated LGRT " + std::to_string(lgrt_code));
}

}  // namespace

int main() {
  std::cerr << std::setprecision(5);
  criterion1();
  criterion2();
  criterion3();
  const Corpus c = corpus();
  std::cerr << "sparsity sweep\n";
  criteria4and5(c);
  std::cerr << "reconstruction training\n";
  const auto model = criterion6(c);
  criterion7(c);
  const auto real = build_graphs(*model, c.train);
  std::cerr << "GAN training\n";
  criterion8(c, *model, real);
  std::cerr << "augmentation\n";
  criterion9(c, *model, real);
  criterion10(c, *model);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
