#pragma once

#include <cstdint>
#include <vector>

#include "propfly/param_store.hpp"

namespace propfly {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

// Adam with decoupled weight decay over the gradient-requiring tensors of a
// ParamStore. The store's handles are shared, so step() updates the caller's
// parameters in place.
class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig config);

  // Applies one update from the accumulated grads, then clears them.
  void step();

  std::int64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }

  // Moments as optimizer-role tensors ("<name>.m", "<name>.v", "step").
  ParamStore state() const;
  void load_state(const ParamStore& state);

 private:
  AdamWConfig config_;
  std::vector<ParamStore::Entry> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace propfly
