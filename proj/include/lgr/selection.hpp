#pragma once

#include <memory>
#include <string>

#include "lgr/autodiff.hpp"
#include "lgr/graph_ops.hpp"
#include "lgr/rng.hpp"

namespace lgr {

/// soft uses the probabilities themselves as S; it makes the whole pipeline
/// differentiable for finite-difference checks.
enum class SelectMode { train_relaxed, eval_hard, soft };

struct Selection {
  /// Binary selector S. In train_relaxed mode gradients pass straight through
  /// the threshold; in eval_hard mode it is a constant.
  Var mask;
  /// Logistic probabilities behind the threshold, hollow and zero on invalid
  /// slots. Used for the L1 penalty.
  Var relaxed;
};

/// R_Theta: three same-padded 3x3 convolutions (1 -> 8 -> 8 -> 1 channels,
/// leaky-relu 0.2 between them) over the correlation matrix viewed as a
/// one-channel image. Fully convolutional, so it accepts a dense V x V matrix
/// or the V x K slot image of a sparse pattern.
class SelectionNet {
 public:
  static constexpr std::size_t kHidden = 8;
  static constexpr double kSlope = 0.2;

  /// Registers "<prefix>.conv{1,2,3}.{w,b}" in `params`.
  SelectionNet(ParameterSet& params, Rng& rng, const std::string& prefix = "theta");

  /// Symmetrized logits: (L + L^T)/2 when dense, partner-slot average otherwise.
  Var logits(const Var& c, const std::shared_ptr<const SlotPattern>& pattern = nullptr) const;
  Selection select(const Var& c, SelectMode mode, const std::shared_ptr<const SlotPattern>& pattern = nullptr) const;

 private:
  Var w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Ones with a zero diagonal.
Tensor hollow_ones(std::size_t n);

}  // namespace lgr
