#pragma once

#include <memory>
#include <span>
#include <vector>

#include "propfly/backbone.hpp"
#include "propfly/synthvid.hpp"

namespace propfly {

struct GuidanceConfig {
  double omega_low = 1.0;
  double omega_high = 7.0;

  void validate() const;
  bool operator==(const GuidanceConfig&) const = default;
};

// One on-the-fly supervision unit. x_low, x_high and v_high all come from the
// same x_t and the same two raw velocity evaluations, which are kept.
struct PairSample {
  std::shared_ptr<const VideoLatent> x_t;
  double t = 0.0;
  ConditionCode c_aug;
  VideoLatent x_low;
  VideoLatent x_high;
  VideoLatent v_high;  // plain values: carries no graph linkage
  VideoLatent v_cond;
  VideoLatent v_uncond;
  double omega_low = 0.0;
  double omega_high = 0.0;
};

// v_uncond + omega (v_cond - v_uncond), evaluated as (1 - omega) v_uncond +
// omega v_cond so that omega = 0 and omega = 1 reproduce the inputs exactly.
VideoLatent cfg_combine(const VideoLatent& v_uncond, const VideoLatent& v_cond, double omega);

// One-step clean-latent estimate x_t - t v.
VideoLatent estimate_clean(const VideoLatent& x_t, double t, const VideoLatent& v);

// Pair assembly from already-evaluated velocities.
PairSample make_pair(std::shared_ptr<const VideoLatent> x_t, double t, const ConditionCode& c_aug,
                     VideoLatent v_cond, VideoLatent v_uncond, const GuidanceConfig& cfg);

// Evaluates v(x_t, t, null) and v(x_t, t, c_aug) once each with recording
// disabled and assembles the pair.
PairSample gen_pair(const BackboneParams& theta, std::shared_ptr<const VideoLatent> x_t, double t,
                    const ConditionCode& c_aug, const GuidanceConfig& cfg);

// Generates a batch of pairs; items are independent, so they are evaluated
// in parallel and returned in index order.
std::vector<PairSample> gen_pairs(const BackboneParams& theta, std::span<const std::shared_ptr<const VideoLatent>> x_t,
                                  std::span<const double> t, std::span<const ConditionCode> c_aug,
                                  const GuidanceConfig& cfg);

// Closed-form E[x1 - x0 | x_t] for x0 ~ N(mu0, sigma0^2 I) per frame,
// x1 ~ N(0, I) and the linear path.
VideoLatent gaussian_velocity_oracle(std::span<const double> mu0, double sigma0, const VideoLatent& x_t, double t);

// Closed-form E[x0 | x_t] under the same model.
VideoLatent gaussian_posterior_mean(std::span<const double> mu0, double sigma0, const VideoLatent& x_t, double t);

}  // namespace propfly
