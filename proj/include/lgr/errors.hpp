#pragma once

#include <stdexcept>
#include <string>

namespace lgr {

/// A caller broke an operation's precondition (shape mismatch, bad config,
/// out-of-range label). The CLI maps this to exit code 1.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Reading or writing persisted data failed, including malformed or truncated
/// files. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A primitive received or produced NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long last_finite_step)
      : std::runtime_error(what), last_finite_step_(last_finite_step) {}
  long last_finite_step() const { return last_finite_step_; }

 private:
  long last_finite_step_;
};

}  // namespace lgr
