#include "propfly/guidance.hpp"

#include <string>

#include "propfly/errors.hpp"
#include "propfly/parallel.hpp"

namespace propfly {

void GuidanceConfig::validate() const {
  if (!(omega_low >= 0.0)) throw ConfigError("omega_low must be >= 0");
  if (!(omega_high > omega_low)) throw ConfigError("omega_high must exceed omega_low");
}

VideoLatent cfg_combine(const VideoLatent& v_uncond, const VideoLatent& v_cond, double omega) {
  if (v_uncond.frames() != v_cond.frames() || v_uncond.dim() != v_cond.dim())
    throw ShapeError("cfg_combine: velocity shapes differ");
  VideoLatent out(v_cond.frames(), v_cond.dim());
  auto o = out.data();
  const auto u = v_uncond.data();
  const auto c = v_cond.data();
  const double keep = 1.0 - omega;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = keep * u[i] + omega * c[i];
  return out;
}

VideoLatent estimate_clean(const VideoLatent& x_t, double t, const VideoLatent& v) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("estimate_clean: t=" + std::to_string(t) + " outside [0, 1]");
  if (x_t.frames() != v.frames() || x_t.dim() != v.dim()) throw ShapeError("estimate_clean: shape mismatch");
  VideoLatent out(x_t.frames(), x_t.dim());
  auto o = out.data();
  const auto x = x_t.data();
  const auto vv = v.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - t * vv[i];
  return out;
}

PairSample make_pair(std::shared_ptr<const VideoLatent> x_t, double t, const ConditionCode& c_aug,
                     VideoLatent v_cond, VideoLatent v_uncond, const GuidanceConfig& cfg) {
  if (!x_t) throw ContractError("make_pair: missing x_t");
  PairSample p;
  p.t = t;
  p.c_aug = c_aug;
  p.omega_low = cfg.omega_low;
  p.omega_high = cfg.omega_high;
  const VideoLatent v_low = cfg_combine(v_uncond, v_cond, cfg.omega_low);
  p.v_high = cfg_combine(v_uncond, v_cond, cfg.omega_high);
  p.x_low = estimate_clean(*x_t, t, v_low);
  p.x_high = estimate_clean(*x_t, t, p.v_high);
  p.v_cond = std::move(v_cond);
  p.v_uncond = std::move(v_uncond);
  p.x_t = std::move(x_t);
  return p;
}

PairSample gen_pair(const BackboneParams& theta, std::shared_ptr<const VideoLatent> x_t, double t,
                    const ConditionCode& c_aug, const GuidanceConfig& cfg) {
  if (!theta.frozen) throw ContractError("gen_pair: backbone must be frozen");
  if (c_aug.is_null) throw ContractError("gen_pair: c_aug must not be the null condition");
  if (!x_t) throw ContractError("gen_pair: missing x_t");
  VideoLatent v_uncond = velocity(theta, *x_t, t, ConditionCode::null());
  VideoLatent v_cond = velocity(theta, *x_t, t, c_aug);
  return make_pair(std::move(x_t), t, c_aug, std::move(v_cond), std::move(v_uncond), cfg);
}

std::vector<PairSample> gen_pairs(const BackboneParams& theta, std::span<const std::shared_ptr<const VideoLatent>> x_t,
                                  std::span<const double> t, std::span<const ConditionCode> c_aug,
                                  const GuidanceConfig& cfg) {
  if (x_t.size() != t.size() || x_t.size() != c_aug.size())
    throw ContractError("gen_pairs: argument lengths differ");
  if (!theta.frozen) throw ContractError("gen_pairs: backbone must be frozen");
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (c_aug[i].is_null) throw ContractError("gen_pairs: c_aug must not be the null condition");
    if (!x_t[i]) throw ContractError("gen_pairs: missing x_t");
  }
  std::vector<PairSample> out(x_t.size());
  // Velocity evaluations on frozen params are pure and record nothing.
  parallel_for(x_t.size(), [&](std::size_t i) { out[i] = gen_pair(theta, x_t[i], t[i], c_aug[i], cfg); });
  return out;
}

namespace {
void check_oracle_args(std::span<const double> mu0, double sigma0, const VideoLatent& x_t, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw RangeError("gaussian oracle: t=" + std::to_string(t) + " must lie strictly inside (0, 1)");
  if (mu0.size() != x_t.dim()) throw ShapeError("gaussian oracle: mean has wrong dimension");
  if (!(sigma0 >= 0.0)) throw RangeError("gaussian oracle: sigma0 must be >= 0");
}
}  // namespace

VideoLatent gaussian_posterior_mean(std::span<const double> mu0, double sigma0, const VideoLatent& x_t, double t) {
  check_oracle_args(mu0, sigma0, x_t, t);
  const double var0 = sigma0 * sigma0;
  const double s2 = (1.0 - t) * (1.0 - t) * var0 + t * t;
  VideoLatent out(x_t.frames(), x_t.dim());
  for (std::size_t f = 0; f < x_t.frames(); ++f)
    for (std::size_t d = 0; d < x_t.dim(); ++d) {
      const double r = x_t(f, d) - (1.0 - t) * mu0[d];
      out(f, d) = mu0[d] + (1.0 - t) * var0 * r / s2;
    }
  return out;
}

VideoLatent gaussian_velocity_oracle(std::span<const double> mu0, double sigma0, const VideoLatent& x_t, double t) {
  check_oracle_args(mu0, sigma0, x_t, t);
  const double var0 = sigma0 * sigma0;
  const double s2 = (1.0 - t) * (1.0 - t) * var0 + t * t;
  VideoLatent out(x_t.frames(), x_t.dim());
  for (std::size_t f = 0; f < x_t.frames(); ++f)
    for (std::size_t d = 0; d < x_t.dim(); ++d) {
      const double r = x_t(f, d) - (1.0 - t) * mu0[d];
      const double e0 = mu0[d] + (1.0 - t) * var0 * r / s2;
      const double e1 = t * r / s2;
      out(f, d) = e1 - e0;
    }
  return out;
}

}  // namespace propfly
