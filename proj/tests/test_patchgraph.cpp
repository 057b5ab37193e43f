#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lgr/errors.hpp"
#include "lgr/ops.hpp"
#include "lgr/patchgraph.hpp"
#include "lgr/rng.hpp"
#include "lgr/selection.hpp"

using namespace lgr;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
  return t;
}

ForegroundIndex random_fg(std::size_t v, Rng& rng) {
  ForegroundIndex fg = foreground_all(v, false);
  for (std::size_t i = 0; i < v; ++i)
    if (rng.uniform() < 0.4) {
      fg.member[i] = 1;
      fg.indices.push_back(i);
    }
  return fg;
}

}  // namespace

TEST_CASE("zigzag starts like JPEG") {
  const auto z = zigzag_order(4);
  REQUIRE(z.size() == 16);
  const std::vector<std::pair<std::size_t, std::size_t>> head{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1}, {0, 2}, {0, 3}};
  for (std::size_t i = 0; i < head.size(); ++i) CHECK(z[i] == head[i]);
  CHECK(z.back() == std::make_pair<std::size_t, std::size_t>(3, 3));
}

TEST_CASE("dct2 is orthonormal") {
  Rng rng(3);
  Tensor b = random_matrix(8, 8, rng);
  const Tensor d = dct2(b);
  double eb = 0, ed = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    eb += b[i] * b[i];
    ed += d[i] * d[i];
  }
  CHECK(ed == doctest::Approx(eb).epsilon(1e-12));
  Tensor flat({8, 8}, 0.5);
  const Tensor df = dct2(flat);
  CHECK(df(0, 0) == doctest::Approx(4.0));
  CHECK(std::abs(df(1, 2)) < 1e-12);
}

TEST_CASE("patch features") {
  Tensor img({16, 16});
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) img(r, c) = (r * 16 + c) / 255.0;
  PatchConfig raw{4, Featurizer::raw, 16};
  const FeatureMatrix f = extract_patch_features(img, raw);
  CHECK(f.features.rows() == 16);
  CHECK(f.features.cols() == 16);
  CHECK(f.grid_h == 4);
  CHECK(f.features(5, 0) == img(4, 4));
  CHECK(f.features(5, 15) == img(7, 7));

  PatchConfig dct{4, Featurizer::dct, 10};
  const FeatureMatrix g = extract_patch_features(img, dct);
  CHECK(g.features.cols() == 10);
  CHECK_THROWS_AS(extract_patch_features(Tensor({15, 16}), dct), ContractViolation);
}

TEST_CASE("correlation properties") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor f = random_matrix(6 + trial % 5, 4, rng);
    if (trial % 3 == 0)
      for (std::size_t k = 0; k < 4; ++k) f(1, k) = 0.0;
    const Tensor c = correlation(f);
    for (std::size_t i = 0; i < c.rows(); ++i) {
      CHECK(c(i, i) == 1.0);
      for (std::size_t j = 0; j < c.cols(); ++j) {
        CHECK(c(i, j) == c(j, i));
        CHECK(c(i, j) >= 0.0);
        CHECK(c(i, j) <= 1.0);
        if (trial % 3 == 0 && i == 1 && j != 1) CHECK(c(i, j) == 0.5);
      }
    }
  }
  const Tensor opp = correlation(Tensor::from_rows({{1, 0}, {-1, 0}, {2, 0}}));
  CHECK(opp(0, 1) == 0.0);
  CHECK(opp(0, 2) == 1.0);
}

TEST_CASE("foreground split reconstructs C") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor c = correlation(random_matrix(9, 3, rng));
    const ForegroundIndex fg = random_fg(9, rng);
    auto [cf, cb] = split_fg_bg(c, fg);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(cf[i] + cb[i] == c[i]);
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) CHECK((cf(i, j) != 0.0) == (fg.contains(i) && fg.contains(j) && c(i, j) != 0.0));
  }
  auto pattern = slot_pattern(3, 3, 8);
  const Tensor sc = ops::slot_cosine(constant(random_matrix(9, 3, rng)), *pattern).value();
  const ForegroundIndex fg = random_fg(9, rng);
  auto [cf, cb] = split_fg_bg(sc, fg, pattern.get());
  for (std::size_t i = 0; i < sc.size(); ++i) CHECK(cf[i] + cb[i] == sc[i]);
}

TEST_CASE("foreground index uses patch centres") {
  Tensor mask({8, 8});
  mask(2, 6) = 1.0;  // centre of patch (0, 1) for P = 4
  mask(5, 5) = 0.0;
  mask(7, 0) = 1.0;  // not a centre
  const ForegroundIndex fg = foreground_index(mask, 4);
  CHECK(fg.indices == std::vector<std::size_t>{1});
}

TEST_CASE("hard selection never adds weight") {
  Rng rng(9);
  ParameterSet ps;
  SelectionNet theta(ps, rng);
  for (int trial = 0; trial < 5; ++trial) {
    const Var c = constant(correlation(random_matrix(12, 5, rng)));
    const Selection s = theta.select(c, SelectMode::eval_hard);
    const Tensor w = build_weights(c, s.mask).value();
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] <= c.value()[i]);
    for (std::size_t i = 0; i < 12; ++i) CHECK(w(i, i) == 0.0);
  }
}

TEST_CASE("edge report complements") {
  Rng rng(10);
  for (std::size_t v : {2u, 5u, 9u}) {
    Tensor s({v, v});
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = i + 1; j < v; ++j) s(i, j) = s(j, i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Tensor comp = hollow_ones(v);
    for (std::size_t i = 0; i < s.size(); ++i) comp[i] -= s[i];
    const ForegroundIndex fg = random_fg(v, rng);
    const EdgeReport a = edge_report({constant(s), nullptr}, fg);
    const EdgeReport b = edge_report({constant(comp), nullptr}, fg);
    CHECK(a.total_edges + b.total_edges == v * (v - 1) / 2);
    CHECK(a.total_percent + b.total_percent == doctest::Approx(100.0));
    const std::size_t k = fg.indices.size();
    CHECK(a.foreground_edges + b.foreground_edges == k * (k - 1) / 2);
  }
}

TEST_CASE("match_features") {
  Rng rng(12);
  const Tensor a = random_matrix(7, 4, rng);
  for (std::size_t i = 0; i < 7; ++i) CHECK(match_features(a, a, i) == i);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  Tensor pa({7, 4}), pb({7, 4});
  const Tensor b = random_matrix(7, 4, rng);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      pa(i, k) = a(perm[i], k);
      pb(i, k) = b(perm[i], k);
    }
  for (std::size_t i = 0; i < 7; ++i) CHECK(perm[match_features(pa, pb, i)] == match_features(a, b, perm[i]));
  const Tensor dup = Tensor::from_rows({{1, 1}, {0, 0}, {1, 1}});
  CHECK(match_features(Tensor::from_rows({{1, 1}}), dup, 0) == 0);
}
