#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "propfly/tensor.hpp"

namespace propfly {

// Role tag carried by every stored tensor; also the byte written to disk.
enum class Role : std::uint8_t { kThetaFrozen = 0, kPhi = 1, kOptimizer = 2 };
std::string_view role_name(Role role);

// Insertion-ordered table of named tensors. Order is part of the contract:
// checkpoints and gradient checks iterate it deterministically.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Tensor tensor;
    Role role = Role::kPhi;
  };

  void add(std::string name, ad::Tensor tensor, Role role);
  bool contains(std::string_view name) const;
  const ad::Tensor& get(std::string_view name) const;
  const Entry& entry(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t total_numel() const;
  void zero_grad();
  // Deep copy with independent buffers.
  ParamStore clone() const;
  // Bitwise equality of names, roles, shapes and values.
  bool bit_equal(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
};

struct GradCheckOptions {
  double h = 1e-5;
  // When nonzero, only this many coordinates per tensor are perturbed,
  // spread evenly over the tensor.
  std::size_t max_coords_per_tensor = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of `f` against central differences for
// every gradient-requiring tensor in `params`. Error per coordinate is
// |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const std::function<ad::Tensor(const ParamStore&)>& f,
                           const ParamStore& params, const GradCheckOptions& options = {});

}  // namespace propfly
