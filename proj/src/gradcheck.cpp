#include "lgr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lgr/errors.hpp"
#include "lgr/rng.hpp"

namespace lgr {

double GradCheckResult::max_rel_error() const {
  double e = 0.0;
  for (const auto& x : entries) e = std::max(e, x.max_rel_error);
  return e;
}

const GradCheckEntry* GradCheckResult::worst() const {
  const GradCheckEntry* w = nullptr;
  for (const auto& x : entries)
    if (!w || x.max_rel_error > w->max_rel_error) w = &x;
  return w;
}

GradCheckResult finite_diff_check(ParameterSet& params, const std::function<Var()>& loss_fn,
                                  const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ContractViolation("finite_diff_check: step must be positive");
  params.zero_grad();
  backward(loss_fn());
  std::vector<Tensor> analytic;
  for (const auto& p : params.items()) analytic.push_back(p.var.grad());

  auto eval = [&](const std::string& name) {
    NoGradGuard guard;
    try {
      return loss_fn().item();
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("gradient check of '" + name + "': " + e.what());
    }
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.items().size(); ++pi) {
    auto& p = params.items()[pi];
    Tensor& w = p.var.mutable_value();
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_entries && idx.size() > options.max_entries) {
      for (std::size_t i = 0; i < options.max_entries; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(options.max_entries);
    }
    GradCheckEntry entry{p.name, 0.0, idx.size()};
    for (std::size_t k : idx) {
      const double orig = w[k];
      w[k] = orig + options.step;
      const double up = eval(p.name);
      w[k] = orig - options.step;
      const double down = eval(p.name);
      w[k] = orig;
      const double numeric = (up - down) / (2.0 * options.step);
      const double err = std::abs(analytic[pi][k] - numeric) / std::max(1.0, std::abs(numeric));
      if (!std::isfinite(err)) throw NonFiniteError("gradient check of '" + p.name + "': non-finite difference");
      entry.max_rel_error = std::max(entry.max_rel_error, err);
    }
    result.entries.push_back(entry);
  }
  params.zero_grad();
  return result;
}

}  // namespace lgr
