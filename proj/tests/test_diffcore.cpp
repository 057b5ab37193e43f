#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lgr/adam.hpp"
#include "lgr/errors.hpp"
#include "lgr/gradcheck.hpp"
#include "lgr/graph_ops.hpp"
#include "lgr/ops.hpp"
#include "lgr/pgm.hpp"
#include "lgr/rng.hpp"
#include "lgr/serialize.hpp"

using namespace lgr;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "lgr_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Checks d(sum(w .* f(x)))/dx against central differences at a random point.
double check_unary(const std::function<Var(const Var&)>& f, Tensor x, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet ps;
  Var xv = ps.add("x", std::move(x));
  Tensor w;
  auto loss = [&] {
    Var y = f(xv);
    if (w.empty()) w = random_tensor(y.shape(), rng);
    return ops::sum(ops::mul(y, constant(w)));
  };
  return finite_diff_check(ps, loss).max_rel_error();
}

}  // namespace

TEST_CASE("primitive values") {
  CHECK(ops::sigmoid(constant(Tensor::scalar(0.0))).item() == 0.5);
  Rng rng(1);
  Tensor a = random_tensor({3, 3}, rng);
  CHECK(ops::matmul(constant(Tensor::identity(3)), constant(a)).value() == a);
  CHECK(ops::l1_norm(constant(Tensor({3}, {1.0, -2.0, 3.0}))).item() == 6.0);
  CHECK(ops::squared_l2(constant(Tensor({2}, {3.0, 4.0}))).item() == 25.0);
  CHECK(ops::mean(constant(Tensor({4}, {1.0, 2.0, 3.0, 6.0}))).item() == 3.0);
}

TEST_CASE("shape and finiteness errors") {
  CHECK_THROWS_AS(ops::matmul(constant(Tensor({2, 3})), constant(Tensor({2, 3}))), ContractViolation);
  CHECK_THROWS_AS(ops::add(constant(Tensor({2})), constant(Tensor({3}))), ContractViolation);
  CHECK_THROWS_AS(ops::log(constant(Tensor({1}, {0.0}))), NonFiniteError);
  CHECK_THROWS_AS(backward(variable(Tensor({2}))), ContractViolation);
  try {
    ops::sigmoid(constant(Tensor({1}, {NAN})));
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("sigmoid") != std::string::npos);
  }
}

TEST_CASE("backward basics") {
  Var x = variable(Tensor::scalar(3.0));
  backward(ops::mul(x, x));
  CHECK(x.grad().item() == 6.0);
  backward(ops::mul(x, x));
  CHECK(x.grad().item() == 12.0);  // accumulates without zeroing

  Var unused = variable(Tensor::scalar(2.0));
  Var y = variable(Tensor::scalar(1.5));
  backward(ops::scale(y, 4.0));
  CHECK(unused.grad().item() == 0.0);
}

TEST_CASE("sum(sigmoid(Wx)) matches finite differences") {
  Rng rng(7);
  ParameterSet ps;
  Var w = ps.add("W", random_tensor({4, 4}, rng));
  Var x = ps.add("x", random_tensor({4, 1}, rng));
  auto r = finite_diff_check(ps, [&] { return ops::sum(ops::sigmoid(ops::matmul(w, x))); }, {.step = 1e-5});
  CHECK(r.max_rel_error() <= 1e-6);
}

TEST_CASE("finite_diff_check on a quadratic") {
  ParameterSet ps;
  Var x = ps.add("x", Tensor::scalar(1.0));
  auto r = finite_diff_check(ps, [&] { return ops::mul(x, x); }, {.step = 1e-5});
  CHECK(r.max_rel_error() <= 1e-8);
  CHECK(r.entries.at(0).parameter == "x");
}

TEST_CASE("finite_diff_check names the parameter on non-finite values") {
  ParameterSet ps;
  Var x = ps.add("offending", Tensor::scalar(0.0));
  Var y = ps.add("fine", Tensor::scalar(1.0));
  auto loss = [&] { return ops::add(ops::log(ops::add_scalar(ops::mul(y, y), 1.0)), ops::log(x)); };
  try {
    finite_diff_check(ps, loss);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError&) {
  }
  (void)x;
}

TEST_CASE("primitive gradients over random points") {
  const Shape s{3, 4};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 100);
    Tensor b = random_tensor(s, rng);
    Tensor pos = random_tensor(s, rng, 0.1, 2.0);
    Tensor prob = random_tensor(s, rng, 0.05, 0.95);
    Tensor sq = random_tensor({4, 3}, rng);
    Tensor onehot({3, 4});
    for (std::size_t r = 0; r < 3; ++r) onehot(r, rng.below(4)) = 1.0;
    const double tol = 1e-4;
    INFO("seed " << seed);
    CHECK(check_unary([&](const Var& x) { return ops::matmul(x, constant(sq)); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::matmul(constant(sq), x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::add(x, constant(b)); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::sub(constant(b), x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::mul(x, x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::scale(x, -2.5); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::transpose(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::sum(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::mean(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::l1_norm(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::squared_l2(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::sigmoid(x); }, random_tensor(s, rng, -3, 3), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::leaky_relu(x, 0.2); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::tanh(x); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::softmax(x, 0); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::softmax(x, 1); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::log(x); }, pos, seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::clamp(x, -0.5, 0.5); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::concat({x, constant(b)}, 0); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::concat({constant(b), x}, 1); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::slice(x, 1, 1, 3); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([](const Var& x) { return ops::slice(x, 0, 2, 3); }, random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::binary_cross_entropy(x, prob); }, prob, seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::categorical_cross_entropy(ops::softmax(x, 1), onehot); },
                      random_tensor(s, rng), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::bce_with_logits(x, prob); }, random_tensor(s, rng, -3, 3), seed) <= tol);
    CHECK(check_unary([&](const Var& x) { return ops::softmax_cross_entropy(x, onehot); }, random_tensor(s, rng), seed) <= tol);
  }
}

TEST_CASE("conv2d_same gradients") {
  Rng rng(3);
  ParameterSet ps;
  Var x = ps.add("x", random_tensor({2, 5, 6}, rng));
  Var w = ps.add("w", random_tensor({3, 2, 3, 3}, rng));
  Var b = ps.add("b", random_tensor({3}, rng));
  Tensor probe = random_tensor({3, 5, 6}, rng);
  auto r = finite_diff_check(ps, [&] { return ops::sum(ops::mul(ops::conv2d_same(x, w, b), constant(probe))); });
  CHECK(r.max_rel_error() <= 1e-6);
}

TEST_CASE("conv2d_same against a direct loop") {
  Rng rng(4);
  Tensor x = random_tensor({2, 4, 5}, rng), w = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2}, rng);
  Tensor y = ops::conv2d_same(constant(x), constant(w), constant(b)).value();
  for (long o = 0; o < 2; ++o)
    for (long r = 0; r < 4; ++r)
      for (long c = 0; c < 5; ++c) {
        double s = b[static_cast<std::size_t>(o)];
        for (long i = 0; i < 2; ++i)
          for (long dr = -1; dr <= 1; ++dr)
            for (long dc = -1; dc <= 1; ++dc) {
              const long rr = r + dr, cc = c + dc;
              if (rr < 0 || cc < 0 || rr >= 4 || cc >= 5) continue;
              s += w[static_cast<std::size_t>(((o * 2 + i) * 3 + dr + 1) * 3 + dc + 1)] * x[static_cast<std::size_t>((i * 4 + rr) * 5 + cc)];
            }
        CHECK(y[static_cast<std::size_t>((o * 4 + r) * 5 + c)] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("straight-through threshold") {
  Var l = variable(Tensor({4}, {-1.0, 0.0, 0.3, 2.0}));
  Var s = ops::straight_through(l);
  CHECK(s.value() == Tensor({4}, {0.0, 0.0, 1.0, 1.0}));
  backward(ops::sum(s));
  for (std::size_t i = 0; i < 4; ++i) {
    const double sg = 1.0 / (1.0 + std::exp(-l.value()[i]));
    CHECK(l.grad()[i] == doctest::Approx(sg * (1 - sg)));
  }
  CHECK_FALSE(ops::hard_threshold(l).requires_grad());
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(9);
  Tensor t = random_tensor({5, 7}, rng, -20, 20);
  for (std::size_t axis : {0u, 1u}) {
    Tensor p = ops::softmax(constant(t), axis).value();
    const std::size_t outer = axis == 1 ? 5 : 7, inner = axis == 1 ? 7 : 5;
    for (std::size_t o = 0; o < outer; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = axis == 1 ? p(o, i) : p(i, o);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Rng rng(11);
  Tensor w0 = random_tensor({3, 3}, rng), a = random_tensor({3, 3}, rng);
  auto f1 = [&](const Var& w) { return ops::sum(ops::tanh(ops::matmul(w, constant(a)))); };
  auto f2 = [&](const Var& w) { return ops::squared_l2(ops::sigmoid(w)); };
  Var w = variable(w0);
  backward(f1(w));
  Tensor g1 = w.grad();
  w.zero_grad();
  backward(f2(w));
  Tensor g2 = w.grad();
  w.zero_grad();
  backward(ops::add(f1(w), f2(w)));
  for (std::size_t i = 0; i < 9; ++i) CHECK(w.grad()[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  CHECK(c.fork(1).next_u64() != c.fork(2).next_u64());
  CHECK(Rng(42).fork(3).next_u64() == Rng(42).fork(3).next_u64());
}

TEST_CASE("adam") {
  ParameterSet ps;
  Var x = ps.add("x", Tensor::scalar(1.0));
  Adam opt({.lr = 0.1});
  opt.step(ps);  // zero grad
  CHECK(x.item() == 1.0);

  backward(x);  // grad 1
  Adam opt2({.lr = 0.1});
  opt2.step(ps);
  CHECK(x.item() == doctest::Approx(0.9).epsilon(1e-6));
  const double m1 = opt2.first_moments()[0][0];
  ps.zero_grad();
  opt2.step(ps);
  opt2.step(ps);
  CHECK(std::abs(opt2.first_moments()[0][0]) < std::abs(m1));
  CHECK(opt2.steps() == 3);

  CHECK_THROWS_AS(Adam({.epsilon = 0.0}), ContractViolation);
}

TEST_CASE("LGRT round trip and truncation") {
  Rng rng(5);
  Tensor t = random_tensor({3, 4, 2}, rng);
  auto p = temp_path("t.lgrt");
  write_tensor(p, t, Dtype::f64);
  CHECK(read_tensor(p) == t);

  write_tensor(p, t, Dtype::f32);
  Dtype d{};
  Tensor back = read_tensor(p, &d);
  CHECK(d == Dtype::f32);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));

  auto bytes = encode_tensor(t);
  CHECK(bytes.size() == 4 + 3 + 3 * 8 + 24 * 8);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 1);
  CHECK(bytes[7] == 3);  // first extent, little-endian
  for (std::size_t cut : {0ul, 3ul, 6ul, 10ul, bytes.size() - 1}) {
    write_file(p, std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(cut)));
    CHECK_THROWS_AS(read_tensor(p), IoError);
  }
}

TEST_CASE("LGRC checkpoint round trip") {
  Rng rng(6);
  NamedTensors entries{{"a.w", random_tensor({2, 2}, rng)}, {"b", Tensor::scalar(3.0)}};
  auto p = temp_path("c.lgrc");
  write_checkpoint(p, entries);
  auto back = read_checkpoint(p);
  REQUIRE(back.size() == 2);
  CHECK(back[0].first == "a.w");
  CHECK(back[0].second == entries[0].second);
  CHECK(back[1].second.item() == 3.0);
  auto bytes = read_file(p);
  bytes.pop_back();
  write_file(p, bytes);
  CHECK_THROWS_AS(read_checkpoint(p), IoError);
}

TEST_CASE("PGM round trip and truncation") {
  Tensor img({3, 5});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) / 14.0;
  auto p = temp_path("i.pgm");
  for (int bits : {8, 16}) {
    write_pgm(p, img, bits);
    Tensor back = read_pgm(p);
    REQUIRE(back.shape() == img.shape());
    const double q = bits == 8 ? 255.0 : 65535.0;
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == std::round(img[i] * q) / q);
  }
  auto bytes = read_file(p);
  bytes.resize(bytes.size() - 3);
  write_file(p, bytes);
  CHECK_THROWS_AS(read_pgm(p), IoError);
  write_file(p, {'P', '5', '\n', '3'});
  CHECK_THROWS_AS(read_pgm(p), IoError);
}

TEST_CASE("cosine affinity") {
  Tensor f = Tensor::from_rows({{1, 0}, {1, 0}, {0, 2}, {-1, 0}, {0, 0}});
  Tensor c = ops::cosine_affinity(constant(f)).value();
  CHECK(c(0, 1) == 1.0);
  CHECK(c(0, 2) == 0.5);
  CHECK(c(0, 3) == 0.0);
  CHECK(c(4, 0) == 0.5);
  CHECK(c(4, 4) == 1.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(c(i, j) == c(j, i));

  Rng rng(2);
  ParameterSet ps;
  Var x = ps.add("F", random_tensor({6, 4}, rng));
  Tensor probe = random_tensor({6, 6}, rng);
  CHECK(finite_diff_check(ps, [&] { return ops::sum(ops::mul(ops::cosine_affinity(x), constant(probe))); }).max_rel_error() <= 1e-6);
}

TEST_CASE("slot pattern") {
  auto p = slot_pattern(6, 7, 32);
  REQUIRE(p->offsets.size() == 32);
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(p->offsets[p->partner[k]].first == -p->offsets[k].first);
    CHECK(p->offsets[p->partner[k]].second == -p->offsets[k].second);
  }
  for (std::size_t v = 0; v < p->vertices(); ++v)
    for (std::size_t k = 0; k < 32; ++k) {
      const int j = p->at(v, k);
      if (j >= 0) CHECK(p->at(static_cast<std::size_t>(j), p->partner[k]) == static_cast<int>(v));
    }
  CHECK(slot_pattern(6, 7, 32) == p);
  CHECK_THROWS_AS(slot_pattern(4, 4, 7), ContractViolation);
}

TEST_CASE("slot ops agree with dense ops") {
  Rng rng(8);
  auto p = slot_pattern(4, 5, 8);
  const std::size_t V = 20, K = 8;
  Tensor f = random_tensor({V, 3}, rng);
  Tensor dense = ops::cosine_affinity(constant(f)).value();
  Tensor slot = ops::slot_cosine(constant(f), *p).value();
  Tensor l = random_tensor({V, K}, rng);
  Tensor sym = ops::slot_symmetrize(constant(l), p).value();
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const int j = p->at(i, k);
      if (j < 0) {
        CHECK(slot(i, k) == 0.0);
        CHECK(sym(i, k) == 0.0);
        continue;
      }
      CHECK(slot(i, k) == doctest::Approx(dense(i, static_cast<std::size_t>(j))).epsilon(1e-12));
      CHECK(sym(i, k) == sym(static_cast<std::size_t>(j), p->partner[k]));
    }

  ParameterSet ps;
  Var fx = ps.add("F", f);
  Var lx = ps.add("L", l);
  Tensor probe = random_tensor({V, K}, rng);
  auto loss = [&] {
    Var a = ops::mul(ops::slot_cosine(fx, *p), ops::slot_mask(ops::sigmoid(ops::slot_symmetrize(lx, p)), p));
    return ops::sum(ops::mul(a, constant(probe)));
  };
  CHECK(finite_diff_check(ps, loss).max_rel_error() <= 1e-6);
}

TEST_CASE("aggregate matches a double loop in both modes") {
  Rng rng(12);
  auto p = slot_pattern(3, 4, 8);
  const std::size_t V = 12, K = 8, D = 3;
  Tensor f = random_tensor({V, D}, rng);
  Tensor ws = random_tensor({V, K}, rng, -0.5, 1.0);
  for (std::size_t i = 0; i < V * K; ++i)
    if (ws[i] < 0 || p->neighbor[i] < 0) ws[i] = 0.0;
  Tensor wd({V, V});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t k = 0; k < K; ++k)
      if (p->at(i, k) >= 0) wd(i, static_cast<std::size_t>(p->at(i, k))) = ws(i, k);

  for (Aggregation mode : {Aggregation::sum, Aggregation::mean}) {
    Tensor a = ops::aggregate({constant(wd), nullptr}, constant(f), mode).value();
    Tensor b = ops::aggregate({constant(ws), p}, constant(f), mode).value();
    for (std::size_t i = 0; i < V; ++i) {
      double deg = 0;
      for (std::size_t j = 0; j < V; ++j) deg += wd(i, j) > 0;
      const double norm = mode == Aggregation::mean ? 1.0 / std::max(1.0, deg) : 1.0;
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t j = 0; j < V; ++j) s += wd(i, j) * f(j, d);
        CHECK(a(i, d) == doctest::Approx(s * norm).epsilon(1e-12));
        CHECK(b(i, d) == doctest::Approx(s * norm).epsilon(1e-12));
      }
    }

    // The mean normaliser jumps when a weight crosses zero, so weights are
    // perturbed only where they are positive (or everywhere for sum).
    Tensor probe = random_tensor({V, D}, rng);
    for (bool dense : {false, true}) {
      const Tensor& w0 = dense ? wd : ws;
      Var fx = variable(f);
      Var wx = variable(w0);
      auto graph = [&](const Var& w) { return GraphWeights{w, dense ? nullptr : p}; };
      auto loss = [&](const Tensor& w) {
        return ops::sum(ops::mul(ops::aggregate(graph(constant(w)), constant(f), mode), constant(probe))).item();
      };
      backward(ops::sum(ops::mul(ops::aggregate(graph(wx), fx, mode), constant(probe))));
      double err = 0.0;
      for (std::size_t i = 0; i < w0.size(); ++i) {
        if (mode == Aggregation::mean && w0[i] <= 1e-4) continue;
        Tensor up = w0, down = w0;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        err = std::max(err, std::abs((loss(up) - loss(down)) / 2e-6 - wx.grad()[i]));
      }
      CHECK(err <= 1e-6);
      ParameterSet ps;
      Var fp = ps.add("F", f);
      Var wc = constant(w0);
      CHECK(finite_diff_check(ps, [&] { return ops::sum(ops::mul(ops::aggregate(graph(wc), fp, mode), constant(probe))); })
                .max_rel_error() <= 1e-6);
    }
  }
}

TEST_CASE("gather") {
  auto t = std::make_shared<GatherTable>();
  t->in_count = 2;
  t->offset = {0, 1, 3};
  t->src = {1, 0, 1};
  t->weight = {1.0, 0.25, 0.75};
  Tensor f = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor g = ops::gather(constant(f), t).value();
  CHECK(g == Tensor::from_rows({{3, 4}, {2.5, 3.5}}));
  ParameterSet ps;
  Var fx = ps.add("F", f);
  CHECK(finite_diff_check(ps, [&] { return ops::squared_l2(ops::gather(fx, t)); }).max_rel_error() <= 1e-6);
}
