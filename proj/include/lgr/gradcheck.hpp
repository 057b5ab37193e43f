#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lgr/autodiff.hpp"

namespace lgr {

struct GradCheckEntry {
  std::string parameter;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  /// Entry with the largest error, or nullptr when nothing was checked.
  const GradCheckEntry* worst() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries checked per parameter; 0 checks every entry.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of `loss_fn` with central differences.
/// The error for one entry is |analytic - numeric| / max(1, |numeric|).
/// A non-finite loss at a perturbed point is rethrown naming the parameter.
GradCheckResult finite_diff_check(ParameterSet& params, const std::function<Var()>& loss_fn,
                                  const GradCheckOptions& options = {});

}  // namespace lgr
