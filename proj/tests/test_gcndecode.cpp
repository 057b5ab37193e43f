#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "lgr/errors.hpp"
#include "lgr/gcndecode.hpp"
#include "lgr/ops.hpp"
#include "lgr/patchgraph.hpp"

using namespace lgr;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t({r, c});
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Dense double loop for sigma(F U + A(W, F) B).
Tensor layer_oracle(const Tensor& f, const Tensor& w, const Tensor& u, const Tensor& b, double slope, Aggregation mode) {
  const std::size_t v = f.rows(), din = f.cols(), dout = u.cols();
  Tensor out({v, dout});
  for (std::size_t i = 0; i < v; ++i) {
    std::vector<double> agg(din, 0.0);
    double deg = 0;
    for (std::size_t j = 0; j < v; ++j) {
      if (w(i, j) > 0) ++deg;
      for (std::size_t k = 0; k < din; ++k) agg[k] += w(i, j) * f(j, k);
    }
    if (mode == Aggregation::mean)
      for (double& a : agg) a /= std::max(1.0, deg);
    for (std::size_t o = 0; o < dout; ++o) {
      double z = 0;
      for (std::size_t k = 0; k < din; ++k) z += f(i, k) * u(k, o) + agg[k] * b(k, o);
      out(i, o) = slope < 0 ? z : (z > 0 ? z : slope * z);
    }
  }
  return out;
}

std::vector<GridCell> shuffled_cells(std::size_t gh, std::size_t gw, Rng& rng) {
  auto cells = canonical_cells(gh, gw);
  for (std::size_t i = cells.size(); i > 1; --i) std::swap(cells[i - 1], cells[rng.below(i)]);
  return cells;
}

}  // namespace

TEST_CASE("graph layer matches the dense double loop") {
  Rng rng(21);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t v = 1 + rng.below(8), din = 1 + rng.below(5), dout = 1 + rng.below(4);
    Tensor w({v, v});
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = i + 1; j < v; ++j) w(i, j) = w(j, i) = rng.uniform() < 0.5 ? rng.uniform() : 0.0;
    const Tensor f = random_matrix(v, din, rng), u = random_matrix(din, dout, rng), b = random_matrix(din, dout, rng);
    const double slope = trial % 4 == 0 ? -1.0 : 0.2;
    const Aggregation mode = trial % 2 ? Aggregation::mean : Aggregation::sum;
    const Tensor got = gcn_layer(constant(f), {constant(w), nullptr}, constant(u), constant(b), slope, mode).value();
    const Tensor want = layer_oracle(f, w, u, b, slope, mode);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("slot layout layer equals the dense layer") {
  Rng rng(22);
  auto pattern = slot_pattern(3, 4, 8);
  const std::size_t v = 12;
  Tensor ws({v, 8}), wd({v, v});
  for (std::size_t i = 0; i < v; ++i)
    for (std::size_t k = 0; k < 8; ++k) {
      const int j = pattern->at(i, k);
      if (j > static_cast<int>(i)) {
        const double x = rng.uniform() < 0.6 ? rng.uniform() : 0.0;
        ws(i, k) = x;
        ws(static_cast<std::size_t>(j), pattern->partner[k]) = x;
        wd(i, j) = wd(j, i) = x;
      }
    }
  const Tensor f = random_matrix(v, 3, rng), u = random_matrix(3, 2, rng), b = random_matrix(3, 2, rng);
  const Tensor a = gcn_layer(constant(f), {constant(ws), pattern}, constant(u), constant(b), 0.2, Aggregation::mean).value();
  const Tensor d = gcn_layer(constant(f), {constant(wd), nullptr}, constant(u), constant(b), 0.2, Aggregation::mean).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(d[i]).epsilon(1e-12));
}

TEST_CASE("IDW properties on random grids") {
  Rng rng(23);
  double sum_err = 0, const_err = 0;
  bool bounded = true, kept = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t gh = 1 + rng.below(5), gw = 1 + rng.below(5), k = 1 + rng.below(std::min<std::size_t>(12, gh * gw));
    const auto cells = shuffled_cells(gh, gw, rng);
    const auto table = idw_table(cells, gh, gw, k);
    REQUIRE(table->out_count() == 4 * gh * gw);
    const Tensor f = random_matrix(gh * gw, 1, rng);
    const Tensor up = upsample_idw(constant(f), cells, gh, gw, k).value();
    const Tensor c = upsample_idw(constant(Tensor({gh * gw, 1}, 0.37)), cells, gh, gw, k).value();
    for (std::size_t n = 0; n < table->out_count(); ++n) {
      double s = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t t = table->offset[n]; t < table->offset[n + 1]; ++t) {
        s += table->weight[t];
        lo = std::min(lo, f[table->src[t]]);
        hi = std::max(hi, f[table->src[t]]);
      }
      sum_err = std::max(sum_err, std::abs(s - 1.0));
      const_err = std::max(const_err, std::abs(c[n] - 0.37));
      if (up[n] < lo - 1e-12 || up[n] > hi + 1e-12) bounded = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto [r, col] = cells[i];
      if (up[(2 * r) * (2 * gw) + 2 * col] != f[i]) kept = false;
    }
  }
  CHECK(sum_err <= 1e-9);
  CHECK(const_err == 0.0);
  CHECK(bounded);
  CHECK(kept);
}

TEST_CASE("IDW neighbour choice") {
  // 1x2 grid -> 2x4; cell (0,1) sits between (0,0) and (0,2) at equal distance.
  const auto t = idw_table(canonical_cells(1, 2), 1, 2, 2);
  const std::size_t n = 1;
  REQUIRE(t->offset[n + 1] - t->offset[n] == 2);
  CHECK(t->weight[t->offset[n]] == doctest::Approx(0.5));
  // k = 1 on a tie picks the smaller (row, col).
  const auto t1 = idw_table(canonical_cells(1, 2), 1, 2, 1);
  CHECK(t1->src[t1->offset[n]] == 0);
}

TEST_CASE("decoder shapes and frozen graphs") {
  Rng rng(24);
  ParameterSet ps;
  SelectionNet theta(ps, rng);
  DecoderConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.patch = 4;
  cfg.layer_dims = {16, 8, 6, 1};
  cfg.k_int = 4;
  Decoder dec(ps, rng, cfg);
  CHECK(cfg.upsample_stages() == 2);
  const Tensor f = random_matrix(16, 16, rng);
  const WeightsResult w = recompute_weights(constant(f), 4, 4, theta, SelectMode::eval_hard, cfg);
  const DecodeResult r = dec.decode(constant(f), w.graph, theta, SelectMode::eval_hard);
  CHECK(r.image.shape() == Shape{16, 16});
  REQUIRE(r.graphs.size() == 3);
  CHECK(r.graphs[0].vertices() == 16);
  CHECK(r.graphs[2].vertices() == 64);
  const DecodeResult again = dec.decode_on_graphs(constant(f), r.graphs);
  for (std::size_t i = 0; i < 256; ++i) CHECK(again.image.value()[i] == r.image.value()[i]);

  cfg.layer_dims = {16, 1};
  CHECK_THROWS_AS(cfg.validate(), ContractViolation);
  const Tensor clamped = clamp_image(Tensor::from_rows({{-0.5, 0.5, 1.5}}));
  CHECK(clamped[0] == 0.0);
  CHECK(clamped[2] == 1.0);
}
