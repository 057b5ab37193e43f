#pragma once

#include <cstddef>
#include <vector>

#include "lgr/autodiff.hpp"

namespace lgr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are keyed by position in the
/// ParameterSet, so the set must not be reordered between steps.
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  /// One update from the accumulated gradients. Gradients are left in place.
  void step(ParameterSet& params);

  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  /// Moments as named tensors ("<param>.m", "<param>.v") plus "adam.t".
  std::vector<std::pair<std::string, Tensor>> state(const ParameterSet& params) const;
  void load_state(const ParameterSet& params, const std::vector<std::pair<std::string, Tensor>>& entries);

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace lgr
