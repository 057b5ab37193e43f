#include "lgr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "lgr/errors.hpp"

namespace lgr::ops {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ContractViolation(std::string(op) + ": " + detail);
}

std::string shapes(const Var& a, const Var& b) { return shape_str(a.shape()) + " vs " + shape_str(b.shape()); }

void require_same(const char* op, const Var& a, const Var& b) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shapes(a, b));
}

void require_2d(const char* op, const Var& a) { require(a.value().ndim() == 2, op, "expected 2-D, got " + shape_str(a.shape())); }

// Accumulates `g` into input i when that input wants gradients.
template <typename Fn>
void into(Node& n, std::size_t i, Fn&& fn) {
  Node& in = *n.inputs[i];
  if (in.requires_grad) fn(in.grad_buffer(), in.value);
}

template <typename F, typename D>
Var unary(const char* op, const Var& a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_op(op, std::move(y), {a}, [dfdx](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[i] * dfdx(x[i], n.value[i]);
    });
  });
}

// 1-D tensors are handled as a single row; axis 0 of a 1-D tensor is axis 1 of the row view.
struct Grid2 {
  std::size_t rows, cols, axis;
};

Grid2 as_grid(const char* op, const Tensor& t, std::size_t axis) {
  if (t.ndim() == 1) {
    require(axis == 0, op, "axis out of range for 1-D tensor");
    return {1, t.dim(0), 1};
  }
  require(t.ndim() == 2, op, "expected 1-D or 2-D, got " + shape_str(t.shape()));
  require(axis < 2, op, "axis out of range");
  return {t.rows(), t.cols(), axis};
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  require(a.value().cols() == b.value().rows(), "matmul", "shape mismatch " + shapes(a, b));
  return make_op("matmul", lgr::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
    const Tensor& A = n.inputs[0]->value;
    const Tensor& B = n.inputs[1]->value;
    into(n, 0, [&](Tensor& g, const Tensor&) {
      const Tensor d = lgr::matmul(n.grad, lgr::transpose(B));
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
    });
    into(n, 1, [&](Tensor& g, const Tensor&) {
      const Tensor d = lgr::matmul(lgr::transpose(A), n.grad);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
    });
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return make_op("add", std::move(y), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k)
      into(n, k, [&](Tensor& g, const Tensor&) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      });
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return make_op("sub", std::move(y), {a, b}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    into(n, 1, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    });
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a, b);
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return make_op("mul", std::move(y), {a, b}, [](Node& n) {
    const Tensor& A = n.inputs[0]->value;
    const Tensor& B = n.inputs[1]->value;
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * B[i];
    });
    into(n, 1, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * A[i];
    });
  });
}

Var scale(const Var& a, double s) {
  Tensor y = a.value();
  for (auto& v : y.data()) v *= s;
  return make_op("scalar-mul", std::move(y), {a}, [s](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor y = a.value();
  for (auto& v : y.data()) v += s;
  return make_op("add-scalar", std::move(y), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  });
}

Var add_bias(const Var& a, const Var& bias) {
  require_2d("add_bias", a);
  require(bias.value().size() == a.value().cols(), "add_bias", "bias " + shapes(bias, a));
  const std::size_t r = a.value().rows(), c = a.value().cols();
  Tensor y = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y(i, j) += bias.value()[j];
  return make_op("add-bias", std::move(y), {a, bias}, [r, c](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    into(n, 1, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[i * c + j];
    });
  });
}

Var transpose(const Var& a) {
  require_2d("transpose", a);
  return make_op("transpose", lgr::transpose(a.value()), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      const Tensor d = lgr::transpose(n.grad);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
    });
  });
}

Var reshape(const Var& a, Shape shape) {
  return make_op("reshape", a.value().reshaped(std::move(shape)), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("sum", Tensor::scalar(s), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (auto& v : g.data()) v += n.grad[0];
    });
  });
}

Var mean(const Var& a) {
  require(!a.value().empty(), "mean", "empty tensor");
  const double inv = 1.0 / static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op("mean", Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (auto& v : g.data()) v += n.grad[0] * inv;
    });
  });
}

Var l1_norm(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += std::abs(v);
  return make_op("l1-norm", Tensor::scalar(s), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * ((x[i] > 0) - (x[i] < 0));
    });
  });
}

Var squared_l2(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return make_op("squared-l2", Tensor::scalar(s), {a}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * n.grad[0] * x[i];
    });
  });
}

Var mean_rows(const Var& a) {
  require_2d("mean_rows", a);
  const std::size_t r = a.value().rows(), c = a.value().cols();
  require(r > 0, "mean_rows", "no rows");
  Tensor y({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += a.value()(i, j);
  const double inv = 1.0 / static_cast<double>(r);
  for (auto& v : y.data()) v *= inv;
  return make_op("mean-rows", std::move(y), {a}, [r, c, inv](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor&) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j] * inv;
    });
  });
}

namespace {
double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var sigmoid(const Var& a) {
  return unary("sigmoid", a, logistic, [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      "leaky-relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var log(const Var& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(const Var& a, double lo, double hi) {
  require(lo <= hi, "clamp", "lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var softmax(const Var& a, std::size_t axis) {
  const Grid2 g = as_grid("softmax", a.value(), axis);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const std::size_t outer = g.axis == 1 ? g.rows : g.cols;
  const std::size_t inner = g.axis == 1 ? g.cols : g.rows;
  auto at = [by_cols = g.axis == 1, cols = g.cols](std::size_t o, std::size_t k) {
    return by_cols ? o * cols + k : k * cols + o;
  };
  for (std::size_t o = 0; o < outer; ++o) {
    double m = -INFINITY;
    for (std::size_t k = 0; k < inner; ++k) m = std::max(m, x[at(o, k)]);
    double z = 0.0;
    for (std::size_t k = 0; k < inner; ++k) z += (y[at(o, k)] = std::exp(x[at(o, k)] - m));
    for (std::size_t k = 0; k < inner; ++k) y[at(o, k)] /= z;
  }
  return make_op("softmax", std::move(y), {a}, [outer, inner, at](Node& n) {
    into(n, 0, [&](Tensor& gr, const Tensor&) {
      for (std::size_t o = 0; o < outer; ++o) {
        double dot = 0.0;
        for (std::size_t k = 0; k < inner; ++k) dot += n.grad[at(o, k)] * n.value[at(o, k)];
        for (std::size_t k = 0; k < inner; ++k) gr[at(o, k)] += n.value[at(o, k)] * (n.grad[at(o, k)] - dot);
      }
    });
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no inputs");
  const Tensor& first = parts.front().value();
  const Grid2 g0 = as_grid("concat", first, axis);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.value().ndim() == first.ndim(), "concat", "rank mismatch " + shapes(p, parts.front()));
    const Grid2 g = as_grid("concat", p.value(), axis);
    const std::size_t other = g.axis == 1 ? g.rows : g.cols;
    const std::size_t other0 = g0.axis == 1 ? g0.rows : g0.cols;
    require(other == other0, "concat", "extent mismatch " + shapes(p, parts.front()));
    const std::size_t w = g.axis == 1 ? g.cols : g.rows;
    widths.push_back(w);
    total += w;
  }
  const std::size_t other = g0.axis == 1 ? g0.rows : g0.cols;
  Shape shape = first.shape();
  if (first.ndim() == 1) {
    shape[0] = total;
  } else {
    shape[axis] = total;
  }
  Tensor y(shape);
  const std::size_t out_cols = g0.axis == 1 ? total : other;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& x = parts[p].value();
    const std::size_t w = widths[p];
    for (std::size_t o = 0; o < other; ++o)
      for (std::size_t k = 0; k < w; ++k) {
        if (g0.axis == 1) {
          y[o * out_cols + offset + k] = x[o * w + k];
        } else {
          y[(offset + k) * out_cols + o] = x[k * other + o];
        }
      }
    offset += w;
  }
  const bool by_cols = g0.axis == 1;
  return make_op("concat", std::move(y), parts, [widths, other, out_cols, by_cols](Node& n) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t w = widths[p];
      into(n, p, [&](Tensor& g, const Tensor&) {
        for (std::size_t o = 0; o < other; ++o)
          for (std::size_t k = 0; k < w; ++k) {
            if (by_cols) {
              g[o * w + k] += n.grad[o * out_cols + offset + k];
            } else {
              g[k * other + o] += n.grad[(offset + k) * out_cols + o];
            }
          }
      });
      offset += w;
    }
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Grid2 g = as_grid("slice", a.value(), axis);
  const std::size_t extent = g.axis == 1 ? g.cols : g.rows;
  require(begin <= end && end <= extent, "slice",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " + shape_str(a.shape()));
  Shape shape = a.shape();
  if (shape.size() == 1) {
    shape[0] = end - begin;
  } else {
    shape[axis] = end - begin;
  }
  Tensor y(shape);
  const std::size_t w = end - begin;
  const bool by_cols = g.axis == 1;
  const std::size_t rows = g.rows, cols = g.cols;
  auto src = [=](std::size_t i, std::size_t j) {  // (i, j) in output grid
    return by_cols ? i * cols + begin + j : (begin + i) * cols + j;
  };
  const std::size_t out_rows = by_cols ? rows : w;
  const std::size_t out_cols = by_cols ? w : cols;
  for (std::size_t i = 0; i < out_rows; ++i)
    for (std::size_t j = 0; j < out_cols; ++j) y[i * out_cols + j] = a.value()[src(i, j)];
  return make_op("slice", std::move(y), {a}, [=](Node& n) {
    into(n, 0, [&](Tensor& gr, const Tensor&) {
      for (std::size_t i = 0; i < out_rows; ++i)
        for (std::size_t j = 0; j < out_cols; ++j) gr[src(i, j)] += n.grad[i * out_cols + j];
    });
  });
}

Var binary_cross_entropy(const Var& p, const Tensor& target) {
  require(p.shape() == target.shape(), "binary-cross-entropy",
          "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(target.shape()));
  static constexpr double eps = 1e-12;
  const Tensor& x = p.value();
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = std::clamp(x[i], eps, 1.0 - eps);
    s -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  return make_op("binary-cross-entropy", Tensor::scalar(s * inv), {p}, [target, inv](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double q = std::clamp(x[i], eps, 1.0 - eps);
        g[i] += n.grad[0] * inv * (-(target[i] / q) + (1.0 - target[i]) / (1.0 - q));
      }
    });
  });
}

Var categorical_cross_entropy(const Var& p, const Tensor& target) {
  require(p.shape() == target.shape(), "categorical-cross-entropy",
          "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(target.shape()));
  static constexpr double eps = 1e-12;
  const Tensor& x = p.value();
  const std::size_t rows = x.ndim() == 2 ? x.rows() : 1;
  const double inv = 1.0 / static_cast<double>(rows);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (target[i] != 0.0) s -= target[i] * std::log(std::max(x[i], eps));
  return make_op("categorical-cross-entropy", Tensor::scalar(s * inv), {p}, [target, inv](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < x.size(); ++i)
        if (target[i] != 0.0) g[i] -= n.grad[0] * inv * target[i] / std::max(x[i], eps);
    });
  });
}

Var bce_with_logits(const Var& logits, const Tensor& target) {
  require(logits.shape() == target.shape(), "bce-with-logits",
          "shape mismatch " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  const Tensor& x = logits.value();
  const double inv = 1.0 / static_cast<double>(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // max(x,0) - x t + log(1 + exp(-|x|))
    s += std::max(x[i], 0.0) - x[i] * target[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  return make_op("bce-with-logits", Tensor::scalar(s * inv), {logits}, [target, inv](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < x.size(); ++i) g[i] += n.grad[0] * inv * (logistic(x[i]) - target[i]);
    });
  });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& target) {
  require(logits.shape() == target.shape() && logits.value().ndim() == 2, "softmax-cross-entropy",
          "shape mismatch " + shape_str(logits.shape()) + " vs " + shape_str(target.shape()));
  const Tensor& x = logits.value();
  const std::size_t r = x.rows(), c = x.cols();
  Tensor prob(x.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double m = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) m = std::max(m, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x(i, j) - m);
    const double lz = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      prob(i, j) = std::exp(x(i, j) - lz);
      s -= target(i, j) * (x(i, j) - lz);
    }
  }
  const double inv = 1.0 / static_cast<double>(r);
  return make_op("softmax-cross-entropy", Tensor::scalar(s * inv), {logits},
                 [target, prob = std::move(prob), inv, r, c](Node& n) {
                   into(n, 0, [&](Tensor& g, const Tensor&) {
                     for (std::size_t i = 0; i < r; ++i) {
                       double tsum = 0.0;
                       for (std::size_t j = 0; j < c; ++j) tsum += target(i, j);
                       for (std::size_t j = 0; j < c; ++j)
                         g(i, j) += n.grad[0] * inv * (tsum * prob(i, j) - target(i, j));
                     }
                   });
                 });
}

namespace {

// Tap-by-tap convolution; faster than the column form for a single output channel.
Var conv2d_direct(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  const std::size_t cin = X.dim(0), H = X.dim(1), Wd = X.dim(2), cout = Wt.dim(0), k = Wt.dim(2);
  const long r = static_cast<long>(k / 2);
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(Wd);

  auto for_taps = [=](auto&& body) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (long ky = 0; ky < static_cast<long>(k); ++ky)
          for (long kx = 0; kx < static_cast<long>(k); ++kx) {
            const long dy = ky - r, dx = kx - r;
            const long y0 = std::max(0L, -dy), y1 = std::min(Hl, Hl - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min(Wl, Wl - dx);
            const std::size_t widx = ((co * cin + ci) * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx);
            body(co, ci, widx, dy, dx, y0, y1, x0, x1);
          }
  };

  Tensor Y({cout, H, Wd});
  for (std::size_t co = 0; co < cout; ++co) {
    double* out = Y.data().data() + co * H * Wd;
    std::fill(out, out + H * Wd, b.value()[co]);
  }
  const double* in = X.data().data();
  double* out = Y.data().data();
  for_taps([&](std::size_t co, std::size_t ci, std::size_t widx, long dy, long dx, long y0, long y1, long x0, long x1) {
    const double wv = Wt[widx];
    for (long y = y0; y < y1; ++y) {
      double* orow = out + (co * H + static_cast<std::size_t>(y)) * Wd;
      const double* irow = in + (ci * H + static_cast<std::size_t>(y + dy)) * Wd + dx;
      for (long xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
    }
  });

  return make_op("conv2d", std::move(Y), {x, w, b}, [=](Node& n) {
    const Tensor& Xv = n.inputs[0]->value;
    const Tensor& Wv = n.inputs[1]->value;
    const double* gout = n.grad.data().data();
    into(n, 0, [&](Tensor& gx, const Tensor&) {
      double* gi = gx.data().data();
      for_taps([&](std::size_t co, std::size_t ci, std::size_t widx, long dy, long dx, long y0, long y1, long x0, long x1) {
        const double wv = Wv[widx];
        for (long y = y0; y < y1; ++y) {
          const double* grow = gout + (co * H + static_cast<std::size_t>(y)) * Wd;
          double* girow = gi + (ci * H + static_cast<std::size_t>(y + dy)) * Wd + dx;
          for (long xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
        }
      });
    });
    into(n, 1, [&](Tensor& gw, const Tensor&) {
      const double* xin = Xv.data().data();
      for_taps([&](std::size_t co, std::size_t ci, std::size_t widx, long dy, long dx, long y0, long y1, long x0, long x1) {
        double acc = 0.0;
        for (long y = y0; y < y1; ++y) {
          const double* grow = gout + (co * H + static_cast<std::size_t>(y)) * Wd;
          const double* irow = xin + (ci * H + static_cast<std::size_t>(y + dy)) * Wd + dx;
          for (long xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
        }
        gw[widx] += acc;
      });
    });
    into(n, 2, [&](Tensor& gb, const Tensor&) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < H * Wd; ++i) acc += gout[co * H * Wd + i];
        gb[co] += acc;
      }
    });
  });
}

}  // namespace

Var conv2d_same(const Var& x, const Var& w, const Var& b) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  require(X.ndim() == 3, "conv2d", "input must be [Cin,H,W], got " + shape_str(X.shape()));
  require(Wt.ndim() == 4 && Wt.dim(2) == Wt.dim(3) && Wt.dim(2) % 2 == 1, "conv2d",
          "weights must be [Cout,Cin,k,k] with odd k, got " + shape_str(Wt.shape()));
  require(Wt.dim(1) == X.dim(0), "conv2d", "channel mismatch " + shapes(w, x));
  require(b.value().size() == Wt.dim(0), "conv2d", "bias " + shapes(b, w));
  const std::size_t cin = X.dim(0), H = X.dim(1), Wd = X.dim(2), cout = Wt.dim(0), k = Wt.dim(2);
  const long r = static_cast<long>(k / 2);
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(Wd);

  if (cout == 1) return conv2d_direct(x, w, b);
  const std::size_t HW = H * Wd, taps = cin * k * k;
  // Output rows are processed in blocks small enough for the column buffer to stay in cache.
  const std::size_t block_rows = std::max<std::size_t>(1, 1024 / Wd);

  // Column block: row (ci, ky, kx) holds the input shifted by that tap for
  // output rows [ya, yb), zero outside the image.
  auto im2col = [=](const double* in, std::size_t ya, std::size_t yb, std::vector<double>& col) {
    const std::size_t n = (yb - ya) * Wd;
    col.assign(taps * n, 0.0);
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (long ky = 0; ky < static_cast<long>(k); ++ky)
        for (long kx = 0; kx < static_cast<long>(k); ++kx) {
          const long dy = ky - r, dx = kx - r;
          const long y0 = std::max(static_cast<long>(ya), -dy), y1 = std::min(static_cast<long>(yb), Hl - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min(Wl, Wl - dx);
          double* crow = col.data() + ((ci * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx)) * n;
          for (long y = y0; y < y1; ++y) {
            const double* irow = in + (ci * H + static_cast<std::size_t>(y + dy)) * Wd + dx;
            double* orow = crow + (static_cast<std::size_t>(y) - ya) * Wd;
            for (long xx = x0; xx < x1; ++xx) orow[xx] = irow[xx];
          }
        }
  };

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using Map = Eigen::Map<RowMat, 0, Stride>;
  using CMap = Eigen::Map<const RowMat, 0, Stride>;
  const auto L = [](std::size_t v) { return static_cast<long>(v); };

  Tensor Y({cout, H, Wd});
  {
    std::vector<double> col;
    CMap wm(Wt.data().data(), L(cout), L(taps), Stride(L(taps)));
    for (std::size_t ya = 0; ya < H; ya += block_rows) {
      const std::size_t yb = std::min(H, ya + block_rows), n = (yb - ya) * Wd;
      im2col(X.data().data(), ya, yb, col);
      Map y(Y.data().data() + ya * Wd, L(cout), L(n), Stride(L(HW)));
      y.noalias() = wm * CMap(col.data(), L(taps), L(n), Stride(L(n)));
      for (std::size_t co = 0; co < cout; ++co) y.row(L(co)).array() += b.value()[co];
    }
  }

  return make_op("conv2d", std::move(Y), {x, w, b}, [=](Node& n) {
    const Tensor& Xv = n.inputs[0]->value;
    const Tensor& Wv = n.inputs[1]->value;
    Node& xn = *n.inputs[0];
    Node& wn = *n.inputs[1];
    Node& bn = *n.inputs[2];
    CMap wm(Wv.data().data(), L(cout), L(taps), Stride(L(taps)));
    std::vector<double> col;
    RowMat gcol;
    for (std::size_t ya = 0; ya < H; ya += block_rows) {
      const std::size_t yb = std::min(H, ya + block_rows), m = (yb - ya) * Wd;
      CMap gy(n.grad.data().data() + ya * Wd, L(cout), L(m), Stride(L(HW)));
      if (wn.requires_grad) {
        im2col(Xv.data().data(), ya, yb, col);
        Map(wn.grad_buffer().data().data(), L(cout), L(taps), Stride(L(taps))).noalias() +=
            gy * CMap(col.data(), L(taps), L(m), Stride(L(m))).transpose();
      }
      if (bn.requires_grad) {
        Tensor& gb = bn.grad_buffer();
        for (std::size_t co = 0; co < cout; ++co) gb[co] += gy.row(L(co)).sum();
      }
      if (xn.requires_grad) {
        gcol.noalias() = wm.transpose() * gy;
        double* gi = xn.grad_buffer().data().data();
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (long ky = 0; ky < static_cast<long>(k); ++ky)
            for (long kx = 0; kx < static_cast<long>(k); ++kx) {
              const long dy = ky - r, dx = kx - r;
              const long y0 = std::max(static_cast<long>(ya), -dy), y1 = std::min(static_cast<long>(yb), Hl - dy);
              const long x0 = std::max(0L, -dx), x1 = std::min(Wl, Wl - dx);
              const double* crow = gcol.data() + ((ci * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx)) * m;
              for (long yy = y0; yy < y1; ++yy) {
                double* girow = gi + (ci * H + static_cast<std::size_t>(yy + dy)) * Wd + dx;
                const double* grow = crow + (static_cast<std::size_t>(yy) - ya) * Wd;
                for (long xx = x0; xx < x1; ++xx) girow[xx] += grow[xx];
              }
            }
      }
    }
  });
}

Var straight_through(const Var& logits) {
  const Tensor& x = logits.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return make_op("straight-through", std::move(y), {logits}, [](Node& n) {
    into(n, 0, [&](Tensor& g, const Tensor& x) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = logistic(x[i]);
        g[i] += n.grad[i] * s * (1.0 - s);
      }
    });
  });
}

Var hard_threshold(const Var& logits) {
  const Tensor& x = logits.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? 1.0 : 0.0;
  return constant(std::move(y));
}

}  // namespace lgr::ops
