#include "lgr/selection.hpp"

#include "lgr/errors.hpp"
#include "lgr/init.hpp"
#include "lgr/ops.hpp"

namespace lgr {

Tensor hollow_ones(std::size_t n) {
  Tensor t({n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 0.0;
  return t;
}

SelectionNet::SelectionNet(ParameterSet& params, Rng& rng, const std::string& prefix) {
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, Var& w, Var& b) {
    w = params.add(prefix + "." + name + ".w", glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng));
    b = params.add(prefix + "." + name + ".b", Tensor({out}));
  };
  conv("conv1", kHidden, 1, w1_, b1_);
  conv("conv2", kHidden, kHidden, w2_, b2_);
  conv("conv3", 1, kHidden, w3_, b3_);
}

Var SelectionNet::logits(const Var& c, const std::shared_ptr<const SlotPattern>& pattern) const {
  if (c.value().ndim() != 2) throw ContractViolation("selection: correlation must be 2-D, got " + shape_str(c.shape()));
  const std::size_t rows = c.value().rows(), cols = c.value().cols();
  if (!pattern && rows != cols) throw ContractViolation("selection: dense correlation must be square, got " + shape_str(c.shape()));
  Var x = ops::reshape(c, {1, rows, cols});
  x = ops::leaky_relu(ops::conv2d_same(x, w1_, b1_), kSlope);
  x = ops::leaky_relu(ops::conv2d_same(x, w2_, b2_), kSlope);
  x = ops::reshape(ops::conv2d_same(x, w3_, b3_), {rows, cols});
  if (pattern) return ops::slot_symmetrize(x, pattern);
  return ops::scale(ops::add(x, ops::transpose(x)), 0.5);
}

Selection SelectionNet::select(const Var& c, SelectMode mode, const std::shared_ptr<const SlotPattern>& pattern) const {
  const Var l = logits(c, pattern);
  auto hollow = [&](const Var& v) {
    if (pattern) return ops::slot_mask(v, pattern);
    return ops::mul(v, constant(hollow_ones(c.value().rows())));
  };
  Selection s;
  s.relaxed = hollow(ops::sigmoid(l));
  switch (mode) {
    case SelectMode::train_relaxed: s.mask = hollow(ops::straight_through(l)); break;
    case SelectMode::eval_hard: s.mask = hollow(ops::hard_threshold(l)); break;
    case SelectMode::soft: s.mask = s.relaxed; break;
  }
  return s;
}

}  // namespace lgr
