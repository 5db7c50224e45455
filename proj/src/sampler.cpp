#include "propfly/sampler.hpp"

#include <cmath>
#include <string>

#include "propfly/errors.hpp"
#include "propfly/guidance.hpp"

namespace propfly {

VideoLatent guided_velocity(const VelocityFn& velocity_fn, const VideoLatent& x, double t, const ConditionCode& c,
                            double omega) {
  if (omega == 1.0) return velocity_fn(x, t, c);
  const VideoLatent v_uncond = velocity_fn(x, t, ConditionCode::null());
  if (omega == 0.0) return v_uncond;
  return cfg_combine(v_uncond, velocity_fn(x, t, c), omega);
}

namespace {

// x - h v, written exactly like estimate_clean so that a single step of
// size t reproduces it bit for bit.
VideoLatent euler_update(const VideoLatent& x, double h, const VideoLatent& v) {
  VideoLatent out(x.frames(), x.dim());
  auto o = out.data();
  const auto xs = x.data();
  const auto vs = v.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] - h * vs[i];
  return out;
}

VideoLatent integrate(const VelocityFn& velocity_fn, VideoLatent x, double t_start, std::size_t steps,
                      const ConditionCode& c, const SamplerConfig& config, std::vector<VideoLatent>* trajectory) {
  if (!x.all_finite()) throw NumericsError("sampler: non-finite initial state");
  if (trajectory) trajectory->push_back(x);
  const double h = t_start / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t_start - static_cast<double>(k) * h;
    const VideoLatent v = guided_velocity(velocity_fn, x, t, c, config.omega);
    if (config.method == SamplerMethod::kEuler) {
      x = euler_update(x, h, v);
    } else {
      const double t_next = t_start - static_cast<double>(k + 1) * h;
      const VideoLatent x_pred = euler_update(x, h, v);
      const VideoLatent v_next = guided_velocity(velocity_fn, x_pred, t_next, c, config.omega);
      VideoLatent out(x.frames(), x.dim());
      auto o = out.data();
      const auto xs = x.data();
      const auto a = v.data();
      const auto b = v_next.data();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] - 0.5 * h * (a[i] + b[i]);
      x = std::move(out);
    }
    if (!x.all_finite()) throw NumericsError("sampler: non-finite state at step " + std::to_string(k));
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

}  // namespace

VideoLatent ode_sample(const VelocityFn& velocity_fn, const VideoLatent& x1, const ConditionCode& c,
                       const SamplerConfig& config, std::vector<VideoLatent>* trajectory) {
  if (config.n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
  return integrate(velocity_fn, x1, 1.0, config.n_steps, c, config, trajectory);
}

std::size_t partial_steps(std::size_t n_steps, double t) {
  if (t <= 0.0) return 0;
  // The tolerance keeps products like 25 * 0.04 from rounding up to 2.
  const double raw = static_cast<double>(n_steps) * t;
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

VideoLatent partial_sample(const VelocityFn& velocity_fn, const VideoLatent& x_t, double t, const ConditionCode& c,
                           const SamplerConfig& config, std::vector<VideoLatent>* trajectory) {
  if (config.n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("partial_sample: t=" + std::to_string(t) + " outside [0, 1]");
  const std::size_t n = partial_steps(config.n_steps, t);
  if (n == 0) {
    if (trajectory) trajectory->push_back(x_t);
    return x_t;
  }
  return integrate(velocity_fn, x_t, t, n, c, config, trajectory);
}

}  // namespace propfly
