#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "lgr/errors.hpp"
#include "lgr/metrics.hpp"
#include "lgr/rng.hpp"
#include "lgr/synthdata.hpp"

using namespace lgr;

namespace {

std::vector<Tensor> random_images(std::size_t n, std::size_t size, Rng& rng) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({size, size});
    const double base = rng.uniform(0.2, 0.6);
    for (double& x : t.data()) x = std::clamp(base + 0.2 * rng.normal(), 0.0, 1.0);
    out.push_back(t);
  }
  return out;
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
std::vector<std::vector<double>> random_rotation(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> q(d, std::vector<double>(d));
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.normal();
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * q[i][p];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * q[i][p];
    }
    double n = 0;
    for (double x : v) n += x * x;
    for (std::size_t i = 0; i < d; ++i) q[i][c] = v[i] / std::sqrt(n);
  }
  return q;
}

}  // namespace

TEST_CASE("psnr examples") {
  Tensor x({4, 4}, 0.5);
  CHECK(*psnr(x, x) == kPsnrCap);
  Tensor y({4, 4}, 0.6);
  CHECK(*psnr(x, y) == doctest::Approx(20.0));
  Tensor empty({4, 4});
  CHECK_FALSE(psnr(x, y, &empty).has_value());
  Tensor mask({4, 4});
  mask(0, 0) = 1;
  y(1, 1) = 0.9;
  CHECK(*psnr(x, y, &mask) == doctest::Approx(20.0));
  CHECK_THROWS_AS(psnr(x, Tensor({3, 4})), ContractViolation);
}

TEST_CASE("dice examples") {
  Tensor a({4, 4}), b({4, 4});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      a(r, c) = 1;
      b(r + 1, c) = 1;
    }
  CHECK(dice(a, a, 1) == 1.0);
  CHECK(dice(a, b, 1) == 0.5);
  CHECK(dice(b, a, 1) == 0.5);
  Tensor d({4, 4});
  d(3, 3) = d(3, 2) = d(2, 3) = d(2, 2) = 1;
  CHECK(dice(a, d, 1) == 0.0);
  CHECK(dice(a, b, 2) == 1.0);
}

TEST_CASE("rmse_nearest examples") {
  Rng rng(1);
  const auto real = random_images(6, 8, rng);
  CHECK(rmse_nearest({real[2], real[4]}, real) == 0.0);
  CHECK(rmse_nearest({Tensor({8, 8}, 0.5)}, {Tensor({8, 8})}) == doctest::Approx(0.5));
  const auto gen = random_images(4, 8, rng);
  const std::vector<Tensor> part(real.begin(), real.begin() + 3);
  CHECK(rmse_nearest(gen, real) <= rmse_nearest(gen, part));
  CHECK(rmse_nearest(gen, real) >= 0.0);
  CHECK_THROWS_AS(rmse_nearest(gen, {}), ContractViolation);
}

TEST_CASE("frechet distance") {
  Gaussian a{{0.0}, Tensor({1, 1}, 1.0), 10}, b{{1.0}, Tensor({1, 1}, 1.0), 10};
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  Gaussian c{{0.0}, Tensor({1, 1}, 4.0), 10};
  CHECK(frechet_distance(a, c) == doctest::Approx(1.0).epsilon(1e-12));  // (2 - 1)^2

  Rng rng(2);
  const auto A = random_images(30, 16, rng), B = random_images(25, 16, rng);
  CHECK(fid(A, A) <= 1e-6);
  CHECK(std::abs(fid(A, B) - fid(B, A)) <= 1e-8);
  CHECK_THROWS_AS(fit_gaussian({{1.0, 2.0}}), ContractViolation);
}

TEST_CASE("frechet distance is rotation invariant") {
  Rng rng(3);
  const std::size_t d = 5;
  std::vector<std::vector<double>> ra, rb;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> x(d), y(d);
    for (std::size_t k = 0; k < d; ++k) {
      x[k] = rng.normal() * (1 + k);
      y[k] = rng.normal() + 0.3 * k;
    }
    ra.push_back(x);
    rb.push_back(y);
  }
  const double base = frechet_distance(fit_gaussian(ra), fit_gaussian(rb));
  for (int trial = 0; trial < 5; ++trial) {
    const auto q = random_rotation(d, rng);
    auto rotate = [&](const std::vector<std::vector<double>>& rows) {
      std::vector<std::vector<double>> out;
      for (const auto& r : rows) {
        std::vector<double> o(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t k = 0; k < d; ++k) o[i] += q[i][k] * r[k];
        out.push_back(o);
      }
      return out;
    };
    CHECK(frechet_distance(fit_gaussian(rotate(ra)), fit_gaussian(rotate(rb))) == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("embedding separates noise from phantoms") {
  const Dataset d = make_dataset(24, {0.5, 0.5}, PhantomSpec{}, 4);
  Rng rng(5);
  std::vector<Tensor> noise;
  for (int i = 0; i < 24; ++i) {
    Tensor t({64, 64});
    for (double& x : t.data()) x = rng.normal(0.3, 0.25);
    noise.push_back(t);
  }
  const auto e = embed_image(d.images[0]);
  CHECK(e.size() == kEmbedDim);
  CHECK(e == embed_image(d.images[0]));
  const auto half = subset(d, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const auto rest = subset(d, {12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23});
  CHECK(fid(half.images, rest.images) < fid(noise, d.images));
}
