#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "propfly/synthvid.hpp"

namespace propfly {

enum class SamplerMethod { kEuler, kHeun };

struct SamplerConfig {
  std::size_t n_steps = 25;
  SamplerMethod method = SamplerMethod::kEuler;
  double omega = 1.0;

  bool operator==(const SamplerConfig&) const = default;
};

// Raw conditional velocity v(x, t, c). Guidance is applied by the sampler.
using VelocityFn = std::function<VideoLatent(const VideoLatent& x, double t, const ConditionCode& c)>;

// CFG-guided velocity; omega == 1 evaluates only the conditional branch.
VideoLatent guided_velocity(const VelocityFn& velocity_fn, const VideoLatent& x, double t, const ConditionCode& c,
                            double omega);

// Integrates dx/dt = v^omega(x, t, c) from t = 1 to t = 0 on t_k = 1 - k/N.
// `trajectory`, when given, receives every grid state including x1.
VideoLatent ode_sample(const VelocityFn& velocity_fn, const VideoLatent& x1, const ConditionCode& c,
                       const SamplerConfig& config, std::vector<VideoLatent>* trajectory = nullptr);

// Number of uniform steps used to integrate from t down to 0: ceil(N t).
std::size_t partial_steps(std::size_t n_steps, double t);

// Integrates from t to 0 in partial_steps(N, t) steps of size t / n.
VideoLatent partial_sample(const VelocityFn& velocity_fn, const VideoLatent& x_t, double t, const ConditionCode& c,
                           const SamplerConfig& config, std::vector<VideoLatent>* trajectory = nullptr);

}  // namespace propfly
