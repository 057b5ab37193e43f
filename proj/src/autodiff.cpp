#include "lgr/autodiff.hpp"

#include <unordered_set>

#include "lgr/errors.hpp"

namespace lgr {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor::zeros_like(value);
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var variable(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  bool needs_grad = false;
  for (const auto& in : inputs) {
    if (!in.value().all_finite()) throw NonFiniteError(std::string("non-finite input to ") + op);
    needs_grad = needs_grad || in.requires_grad();
  }
  if (!value.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  if (needs_grad && g_grad_enabled) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (!loss) throw ContractViolation("backward: empty loss");
  if (loss.value().size() != 1) {
    throw ContractViolation("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor::zeros_like(n->value);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor();
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var ParameterSet::add(std::string name, Tensor init) {
  if (find(name)) throw ContractViolation("parameter name '" + name + "' already used");
  Var v = variable(std::move(init));
  params_.push_back({std::move(name), v});
  return v;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

}  // namespace lgr
