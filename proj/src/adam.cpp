#include "lgr/adam.hpp"

#include <cmath>

#include "lgr/errors.hpp"

namespace lgr {

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.epsilon > 0.0)) throw ContractViolation("adam: epsilon must be positive");
  if (!(config_.lr > 0.0)) throw ContractViolation("adam: learning rate must be positive");
  if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
    throw ContractViolation("adam: betas must lie in [0, 1)");
  }
}

void Adam::step(ParameterSet& params) {
  auto& items = params.items();
  if (m_.empty()) {
    for (const auto& p : items) {
      m_.push_back(Tensor::zeros_like(p.var.value()));
      v_.push_back(Tensor::zeros_like(p.var.value()));
    }
  }
  if (m_.size() != items.size()) throw ContractViolation("adam: parameter set changed size between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor& w = items[i].var.mutable_value();
    const Tensor& g = items[i].var.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    if (m.shape() != w.shape()) throw ContractViolation("adam: moment shape mismatch for '" + items[i].name + "'");
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      w[k] -= config_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state(const ParameterSet& params) const {
  std::vector<std::pair<std::string, Tensor>> out;
  const auto& items = params.items();
  for (std::size_t i = 0; i < m_.size() && i < items.size(); ++i) {
    out.emplace_back(items[i].name + ".m", m_[i]);
    out.emplace_back(items[i].name + ".v", v_[i]);
  }
  out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(t_)));
  return out;
}

void Adam::load_state(const ParameterSet& params, const std::vector<std::pair<std::string, Tensor>>& entries) {
  auto lookup = [&](const std::string& name) -> const Tensor* {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  };
  const Tensor* t = lookup("adam.t");
  if (!t) return;
  std::vector<Tensor> m, v;
  for (const auto& p : params.items()) {
    const Tensor* pm = lookup(p.name + ".m");
    const Tensor* pv = lookup(p.name + ".v");
    if (!pm || !pv || pm->shape() != p.var.shape() || pv->shape() != p.var.shape()) {
      throw ContractViolation("adam: checkpoint lacks matching moments for '" + p.name + "'");
    }
    m.push_back(*pm);
    v.push_back(*pv);
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = static_cast<long>(t->item());
}

}  // namespace lgr
