#pragma once

#include <vector>

#include "lgr/autodiff.hpp"

/// Differentiable primitives. Every function validates shapes (throwing
/// ContractViolation with the offending shapes) and records a backward edge
/// when any input requires gradients.
namespace lgr::ops {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise (Hadamard) product.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a[n x m] + bias[m] broadcast over rows.
Var add_bias(const Var& a, const Var& bias);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);
Var mean(const Var& a);
Var l1_norm(const Var& a);
Var squared_l2(const Var& a);
/// Column means of a 2-D tensor, shape [1 x m].
Var mean_rows(const Var& a);

Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
/// Softmax along `axis` of a 1-D or 2-D tensor.
Var softmax(const Var& a, std::size_t axis);
Var log(const Var& a);
/// Gradient passes through where lo < a < hi and is zero outside.
Var clamp(const Var& a, double lo, double hi);

/// Concatenation of 1-D or 2-D tensors along `axis`.
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis` of a 1-D or 2-D tensor.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Mean binary cross-entropy of probabilities `p` against targets in [0,1].
Var binary_cross_entropy(const Var& p, const Tensor& target);
/// Mean over rows of -sum_c t_rc log p_rc for probability rows `p`.
Var categorical_cross_entropy(const Var& p, const Tensor& target);
/// Numerically stable BCE on logits, mean over entries.
Var bce_with_logits(const Var& logits, const Tensor& target);
/// Numerically stable softmax + categorical cross-entropy on logit rows, mean over rows.
Var softmax_cross_entropy(const Var& logits, const Tensor& target);

/// Same-padded 2-D cross-correlation. x: [Cin, H, W]; w: [Cout, Cin, k, k] with
/// k odd; b: [Cout]. Output [Cout, H, W].
Var conv2d_same(const Var& x, const Var& w, const Var& b);

/// Straight-through binarization of logits: forward 1 where logit > 0 (the
/// logistic output exceeds 0.5), else 0; backward uses the logistic derivative.
Var straight_through(const Var& logits);
/// Plain threshold (logit > 0), not differentiable; returns a constant.
Var hard_threshold(const Var& logits);

}  // namespace lgr::ops
