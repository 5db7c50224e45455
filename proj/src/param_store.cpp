#include "propfly/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "propfly/errors.hpp"

namespace propfly {

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kThetaFrozen: return "theta_frozen";
    case Role::kPhi: return "phi";
    case Role::kOptimizer: return "optimizer";
  }
  return "?";
}

void ParamStore::add(std::string name, ad::Tensor tensor, Role role) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor), role});
}

bool ParamStore::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

const ad::Tensor& ParamStore::get(std::string_view name) const { return entry(name).tensor; }

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.clone(e.tensor.requires_grad()), e.role);
  return out;
}

bool ParamStore::bit_equal(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.role != b.role || a.tensor.shape() != b.tensor.shape()) return false;
    if (std::memcmp(a.tensor.data().data(), b.tensor.data().data(),
                    a.tensor.numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

GradCheckResult grad_check(const std::function<ad::Tensor(const ParamStore&)>& f,
                           const ParamStore& params, const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw ContractError("grad_check: h must be positive");

  ad::Tape tape;
  ad::TapeScope scope(tape);
  ParamStore handles = params;  // shares nodes with `params`
  handles.zero_grad();

  const ad::Tensor loss = f(params);
  if (!std::isfinite(loss.item())) throw NumericsError("grad_check: f is not finite at the base point");
  ad::backward(loss);

  auto eval = [&]() {
    ad::NoGradGuard no_grad;
    const double v = f(params).item();
    if (!std::isfinite(v)) throw NumericsError("grad_check: f is not finite at a perturbed point");
    return v;
  };

  GradCheckResult result;
  for (const auto& e : params) {
    if (!e.tensor.requires_grad()) continue;
    ad::Tensor t = e.tensor;
    const auto analytic = t.grad_or_zero();
    const std::size_t n = t.numel();
    std::size_t count = n;
    if (options.max_coords_per_tensor > 0) count = std::min(n, options.max_coords_per_tensor);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : (c * n) / count + (n / count) / 2;
      auto data = t.mutable_data();
      const double saved = data[i];
      data[i] = saved + options.h;
      const double fp = eval();
      data[i] = saved - options.h;
      const double fm = eval();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * options.h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_param.empty()) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        result.worst_param = e.name;
        result.worst_index = i;
      }
    }
  }
  handles.zero_grad();
  return result;
}

}  // namespace propfly
