#include "propfly/optim.hpp"

#include <cmath>

#include "propfly/errors.hpp"

namespace propfly {

AdamW::AdamW(const ParamStore& params, AdamWConfig config) : config_(config) {
  for (const auto& e : params) {
    if (!e.tensor.requires_grad()) continue;
    params_.push_back(e);
    m_.emplace_back(e.tensor.numel(), 0.0);
    v_.emplace_back(e.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Tensor& p = params_[k].tensor;
    const auto grad = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      w[i] -= config_.lr * config_.weight_decay * w[i];
      w[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
    p.zero_grad();
  }
}

ParamStore AdamW::state() const {
  ParamStore out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& shape = params_[k].tensor.shape();
    out.add(params_[k].name + ".m", ad::Tensor::from(shape, m_[k]), Role::kOptimizer);
    out.add(params_[k].name + ".v", ad::Tensor::from(shape, v_[k]), Role::kOptimizer);
  }
  out.add("step", ad::Tensor::scalar(static_cast<double>(t_)), Role::kOptimizer);
  return out;
}

void AdamW::load_state(const ParamStore& state) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& m = state.get(params_[k].name + ".m");
    const auto& v = state.get(params_[k].name + ".v");
    if (m.numel() != m_[k].size() || v.numel() != v_[k].size())
      throw ShapeError("optimizer state shape mismatch for '" + params_[k].name + "'");
    m_[k].assign(m.data().begin(), m.data().end());
    v_[k].assign(v.data().begin(), v.data().end());
  }
  t_ = static_cast<std::int64_t>(state.get("step").item());
}

}  // namespace propfly
