#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lgr/tensor.hpp"

namespace lgr {

/// One value in a computation graph. Interior nodes carry a backward closure
/// that reads `grad` and accumulates into the grads of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  /// Gradient buffer, zero-initialized on first access.
  Tensor& grad_buffer();
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Mutable access for optimizers and checkpoint loading; only meaningful on leaves.
  Tensor& mutable_value() { return node_->value; }
  /// Accumulated gradient; an all-zero tensor when nothing has flowed here yet.
  const Tensor& grad() const { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var variable(Tensor value);

/// Builds an interior node. When no input requires gradients, or gradient
/// recording is disabled, the node is returned detached (no backward edge).
/// Throws NonFiniteError naming `op` if an input or the result holds NaN/Inf.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
/// interior gradients are recomputed on every call.
void backward(const Var& loss);

/// While alive, new operations do not record backward edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

struct Parameter {
  std::string name;
  Var var;
};

/// Named trainable tensors of one model. Names are unique within the set.
class ParameterSet {
 public:
  Var add(std::string name, Tensor init);
  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  const Parameter* find(const std::string& name) const;
  void zero_grad();
  std::size_t numel() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace lgr
