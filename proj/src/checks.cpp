#include "lgr/checks.hpp"

#include <functional>

#include "lgr/gcndecode.hpp"
#include "lgr/gradcheck.hpp"
#include "lgr/graphgan.hpp"
#include "lgr/ops.hpp"
#include "lgr/selftrain.hpp"
#include "lgr/tasks.hpp"

namespace lgr {

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Loss sum(w .* f(inputs)) with a fixed random w.
CheckLine check_op(const std::string& name, std::vector<Tensor> inputs, const std::function<Var(const std::vector<Var>&)>& f, Rng& rng) {
  ParameterSet ps;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(ps.add("in" + std::to_string(i), std::move(inputs[i])));
  Tensor w;
  auto loss = [&] {
    const Var y = f(vars);
    if (w.empty()) w = uniform(y.shape(), rng);
    return ops::sum(ops::mul(y, constant(w)));
  };
  const auto r = finite_diff_check(ps, loss);
  std::size_t checked = 0;
  for (const auto& e : r.entries) checked += e.checked;
  return {name, r.max_rel_error(), checked};
}

CheckLine check_params(const std::string& name, ParameterSet& ps, const std::function<Var()>& loss) {
  const auto r = finite_diff_check(ps, loss);
  std::size_t checked = 0;
  for (const auto& e : r.entries) checked += e.checked;
  return {name, r.max_rel_error(), checked};
}

Tensor probabilities(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = uniform({rows, cols}, rng, 0.1, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += t(r, c);
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= s;
  }
  return t;
}

DecoderConfig small_geometry() {
  DecoderConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.patch = 4;
  cfg.layer_dims = {16, 8, 6, 1};
  cfg.k_int = 4;
  return cfg;
}

// Zero biases sit on activation kinks over zero regions; move every bias off zero.
void jitter_biases(ParameterSet& ps, Rng& rng) {
  for (auto& p : ps.items())
    if (p.name.size() > 2 && p.name.compare(p.name.size() - 2, 2, ".b") == 0)
      for (double& x : p.var.mutable_value().data()) x = rng.uniform(-0.1, 0.1);
}

}  // namespace

std::vector<CheckLine> gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckLine> out;
  using V = std::vector<Var>;

  out.push_back(check_op("matmul", {uniform({3, 4}, rng), uniform({4, 2}, rng)}, [](const V& v) { return ops::matmul(v[0], v[1]); }, rng));
  out.push_back(check_op("add", {uniform({3, 4}, rng), uniform({3, 4}, rng)}, [](const V& v) { return ops::add(v[0], v[1]); }, rng));
  out.push_back(check_op("sub", {uniform({3, 4}, rng), uniform({3, 4}, rng)}, [](const V& v) { return ops::sub(v[0], v[1]); }, rng));
  out.push_back(check_op("elementwise-mul", {uniform({3, 4}, rng), uniform({3, 4}, rng)}, [](const V& v) { return ops::mul(v[0], v[1]); }, rng));
  out.push_back(check_op("scalar-mul", {uniform({3, 4}, rng)}, [](const V& v) { return ops::scale(v[0], -2.5); }, rng));
  out.push_back(check_op("add-scalar", {uniform({3, 4}, rng)}, [](const V& v) { return ops::add_scalar(v[0], 0.7); }, rng));
  out.push_back(check_op("add-bias", {uniform({3, 4}, rng), uniform({4}, rng)}, [](const V& v) { return ops::add_bias(v[0], v[1]); }, rng));
  out.push_back(check_op("transpose", {uniform({3, 4}, rng)}, [](const V& v) { return ops::transpose(v[0]); }, rng));
  out.push_back(check_op("reshape", {uniform({3, 4}, rng)}, [](const V& v) { return ops::reshape(v[0], {2, 6}); }, rng));
  out.push_back(check_op("sum", {uniform({3, 4}, rng)}, [](const V& v) { return ops::sum(v[0]); }, rng));
  out.push_back(check_op("mean", {uniform({3, 4}, rng)}, [](const V& v) { return ops::mean(v[0]); }, rng));
  out.push_back(check_op("mean-rows", {uniform({3, 4}, rng)}, [](const V& v) { return ops::mean_rows(v[0]); }, rng));
  out.push_back(check_op("l1-norm", {uniform({3, 4}, rng)}, [](const V& v) { return ops::l1_norm(v[0]); }, rng));
  out.push_back(check_op("squared-l2", {uniform({3, 4}, rng)}, [](const V& v) { return ops::squared_l2(v[0]); }, rng));
  out.push_back(check_op("sigmoid", {uniform({3, 4}, rng, -3, 3)}, [](const V& v) { return ops::sigmoid(v[0]); }, rng));
  out.push_back(check_op("leaky-relu", {uniform({3, 4}, rng)}, [](const V& v) { return ops::leaky_relu(v[0], 0.2); }, rng));
  out.push_back(check_op("tanh", {uniform({3, 4}, rng, -2, 2)}, [](const V& v) { return ops::tanh(v[0]); }, rng));
  out.push_back(check_op("softmax-rows", {uniform({3, 4}, rng, -2, 2)}, [](const V& v) { return ops::softmax(v[0], 1); }, rng));
  out.push_back(check_op("softmax-cols", {uniform({3, 4}, rng, -2, 2)}, [](const V& v) { return ops::softmax(v[0], 0); }, rng));
  out.push_back(check_op("log", {uniform({3, 4}, rng, 0.2, 2.0)}, [](const V& v) { return ops::log(v[0]); }, rng));
  out.push_back(check_op("clamp", {uniform({3, 4}, rng)}, [](const V& v) { return ops::clamp(v[0], -0.5, 0.5); }, rng));
  out.push_back(check_op("concat", {uniform({3, 4}, rng), uniform({3, 2}, rng)}, [](const V& v) { return ops::concat({v[0], v[1]}, 1); }, rng));
  out.push_back(check_op("slice", {uniform({5, 4}, rng)}, [](const V& v) { return ops::slice(v[0], 0, 1, 4); }, rng));
  {
    const Tensor t = uniform({3, 4}, rng, 0, 1);
    out.push_back(check_op("binary-cross-entropy", {uniform({3, 4}, rng, 0.1, 0.9)},
                           [t](const V& v) { return ops::binary_cross_entropy(v[0], t); }, rng));
    out.push_back(check_op("bce-with-logits", {uniform({3, 4}, rng, -3, 3)}, [t](const V& v) { return ops::bce_with_logits(v[0], t); }, rng));
  }
  {
    const Tensor t = probabilities(3, 4, rng);
    out.push_back(check_op("categorical-cross-entropy", {probabilities(3, 4, rng)},
                           [t](const V& v) { return ops::categorical_cross_entropy(v[0], t); }, rng));
    out.push_back(check_op("softmax-cross-entropy", {uniform({3, 4}, rng, -2, 2)},
                           [t](const V& v) { return ops::softmax_cross_entropy(v[0], t); }, rng));
  }
  out.push_back(check_op("conv2d", {uniform({2, 5, 6}, rng), uniform({3, 2, 3, 3}, rng), uniform({3}, rng)},
                         [](const V& v) { return ops::conv2d_same(v[0], v[1], v[2]); }, rng));
  out.push_back(check_op("cosine-affinity", {uniform({6, 4}, rng)}, [](const V& v) { return ops::cosine_affinity(v[0]); }, rng));
  {
    auto pattern = slot_pattern(3, 4, 8);
    out.push_back(check_op("slot-cosine", {uniform({12, 4}, rng)}, [pattern](const V& v) { return ops::slot_cosine(v[0], *pattern); }, rng));
    out.push_back(check_op("slot-symmetrize", {uniform({12, 8}, rng)}, [pattern](const V& v) { return ops::slot_symmetrize(v[0], pattern); }, rng));
    Tensor ws = uniform({12, 8}, rng, 0.1, 1.0);
    out.push_back(check_op("aggregate-slot", {uniform({12, 3}, rng), ws},
                           [pattern](const V& v) { return ops::aggregate({v[1], pattern}, v[0], Aggregation::sum); }, rng));
  }
  for (Aggregation mode : {Aggregation::sum, Aggregation::mean}) {
    Tensor w = uniform({5, 5}, rng, 0.1, 1.0);
    out.push_back(check_op(mode == Aggregation::sum ? "aggregate-sum" : "aggregate-mean", {uniform({5, 3}, rng), w},
                           [mode](const V& v) { return ops::aggregate({v[1], nullptr}, v[0], mode); }, rng));
  }

  // Composite: graph convolution layer, dense and slot layouts.
  {
    Tensor w({6, 6});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = i + 1; j < 6; ++j) w(i, j) = w(j, i) = rng.uniform() < 0.6 ? rng.uniform(0.1, 1.0) : 0.0;
    out.push_back(check_op("graph-layer", {uniform({6, 4}, rng), uniform({4, 3}, rng), uniform({4, 3}, rng)},
                           [w](const V& v) { return gcn_layer(v[0], {constant(w), nullptr}, v[1], v[2], 0.2, Aggregation::mean); }, rng));
    out.push_back(check_op("graph-layer-identity", {uniform({6, 4}, rng), uniform({4, 3}, rng), uniform({4, 3}, rng)},
                           [w](const V& v) { return gcn_layer(v[0], {constant(w), nullptr}, v[1], v[2], -1.0, Aggregation::sum); }, rng));
  }
  out.push_back(check_op("idw-upsample", {uniform({12, 3}, rng)},
                         [](const V& v) { return upsample_idw(v[0], canonical_cells(3, 4), 3, 4, 5); }, rng));

  // Composite: selection network and the joint reconstruction objective.
  {
    ParameterSet ps;
    Rng init(seed + 1);
    SelectionNet theta(ps, init);
    jitter_biases(ps, rng);
    const Tensor c = correlation(uniform({7, 4}, rng));
    const Tensor w = uniform({7, 7}, rng);
    out.push_back(check_params("selection-net", ps, [&] { return ops::sum(ops::mul(theta.select(constant(c), SelectMode::soft).mask, constant(w))); }));
  }
  PhantomSpec spec;
  spec.size = 16;
  const Dataset data = make_dataset(6, {0.5, 0.5}, spec, seed + 2);
  LgrModel model(PatchConfig{4, Featurizer::dct, 16}, small_geometry(), seed + 3);
  {
    jitter_biases(model.params(), rng);
    const auto samples = prepare_samples(model, data);
    for (PenaltyReading reading : {PenaltyReading::separate, PenaltyReading::masked}) {
      TrainConfig cfg;
      cfg.alpha = 0.025;
      cfg.penalty = reading;
      cfg = cfg.resolved();
      out.push_back(check_params(reading == PenaltyReading::separate ? "recon-objective" : "recon-objective-masked", model.params(),
                                 [&] { return sample_objective(model, samples[0], cfg, SelectMode::soft); }));
    }
  }

  // Composite: adversarial objectives.
  const auto real = build_graphs(model, data);
  for (GanObjective objective : {GanObjective::nonsaturating, GanObjective::literal, GanObjective::wasserstein}) {
    for (bool conditional : {false, true}) {
      if (conditional && objective != GanObjective::nonsaturating) continue;
      GanConfig gc;
      gc.latent = 8;
      gc.gen_hidden = {16, 32};
      gc.disc_dims = {12, 8};
      gc.objective = objective;
      gc.conditional = conditional;
      gc.seed = seed + 4;
      GraphGan gan(16, 16, gc, FeatureStats::fit(real));
      const std::vector<int> y = conditional ? std::vector<int>{1} : std::vector<int>{};
      const int label = conditional ? 1 : -1;
      const Tensor z = uniform({1, 8}, rng, -2, 2);
      const Tensor fake = gan.generate(constant(z), y)[0].value();
      const GraphWeights fw = gan.fake_weights(model, constant(fake));
      const GraphWeights fake_w{constant(fw.weights.value()), fw.pattern};
      const Tensor real_std = gan.stats().standardize(real[1].features);
      const std::string tag = objective_name(objective) + (conditional ? "-acgan" : "");
      out.push_back(check_params("discriminator-" + tag, gan.discriminator_params(), [&] {
        return discriminator_objective(gan, real_std, real[1], constant(fake), fake_w, label);
      }));
      out.push_back(check_params("generator-" + tag, gan.generator_params(),
                                 [&] { return generator_objective(gan, model, gan.generate(constant(z), y)[0], label); }));
    }
  }

  // Composite: downstream task objectives.
  {
    ClassifierConfig cc;
    cc.dims = {12, 8};
    GraphClassifier clf(16, cc, FeatureStats::fit(real));
    out.push_back(check_params("classification-objective", clf.params(), [&] {
      return ops::softmax_cross_entropy(clf.logits(real[2]), one_hot({real[2].label}, 2));
    }));
    SegmenterConfig sc;
    Segmenter seg(small_geometry(), sc);
    const SegSample s = segmentation_sample(model, real[3], data.masks[3]);
    out.push_back(check_params("segmentation-objective", seg.params(), [&] { return segmentation_loss(seg.logits(s), s.mask, 4); }));
  }
  return out;
}

}  // namespace lgr
