#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "propfly/adapter.hpp"
#include "propfly/backbone.hpp"
#include "propfly/rng.hpp"
#include "propfly/synthvid.hpp"

namespace propfly::test {

inline VideoLatent random_latent(CounterRng& rng, std::size_t frames = 8, std::size_t dim = 16, double scale = 1.0) {
  VideoLatent v(frames, dim);
  for (double& x : v.data()) x = scale * rng.normal();
  return v;
}

inline ad::Tensor random_tensor(CounterRng& rng, ad::Shape shape, bool requires_grad = false, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline const SynthWorld& default_world() {
  static const SynthWorld world{SynthConfig{}};
  return world;
}

// A briefly pretrained, frozen backbone on the default world. Enough steps
// for conditional and unconditional velocities to differ clearly.
inline const BackboneParams& small_backbone() {
  static const BackboneParams params = [] {
    PretrainConfig cfg;
    cfg.steps = 150;
    cfg.batch_size = 8;
    return pretrain(BackboneConfig{}, default_world(), cfg).params;
  }();
  return params;
}

// Adapter whose injection heads are random instead of zero, so every phi
// tensor influences the output.
inline AdapterParams active_adapter(const BackboneConfig& config, std::uint64_t seed, double head_scale = 0.05) {
  AdapterParams phi = init_adapter(config, seed);
  CounterRng rng(seed, Purpose::kTest, 77);
  for (std::size_t j = 0; j < phi.n_blocks; ++j)
    for (const auto& name : {AdapterParams::head_weight(j), AdapterParams::head_bias(j)}) {
      ad::Tensor t = phi[name];
      for (double& x : t.mutable_data()) x = head_scale * rng.normal();
    }
  return phi;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("propfly_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace propfly::test
