#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "propfly/rng.hpp"
#include "propfly/tensor.hpp"

namespace propfly {

// Dims [0, kMotionDims) of every frame hold the 2-D position; the rest hold
// appearance.
inline constexpr std::size_t kMotionDims = 2;

// F x D matrix of per-frame latents, row-major.
class VideoLatent {
 public:
  VideoLatent() = default;
  VideoLatent(std::size_t frames, std::size_t dim, double fill = 0.0);
  VideoLatent(std::size_t frames, std::size_t dim, std::vector<double> values);

  static VideoLatent from_tensor(const ad::Tensor& t);
  ad::Tensor to_tensor(bool requires_grad = false) const;

  std::size_t frames() const { return frames_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t f, std::size_t d) { return values_[f * dim_ + d]; }
  double operator()(std::size_t f, std::size_t d) const { return values_[f * dim_ + d]; }
  std::span<double> row(std::size_t f) { return {values_.data() + f * dim_, dim_}; }
  std::span<const double> row(std::size_t f) const { return {values_.data() + f * dim_, dim_}; }
  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  VideoLatent& operator+=(const VideoLatent& o);
  VideoLatent& operator-=(const VideoLatent& o);
  VideoLatent& operator*=(double s);
  friend VideoLatent operator+(VideoLatent a, const VideoLatent& b) { return a += b; }
  friend VideoLatent operator-(VideoLatent a, const VideoLatent& b) { return a -= b; }
  friend VideoLatent operator*(double s, VideoLatent a) { return a *= s; }
  friend VideoLatent operator*(VideoLatent a, double s) { return a *= s; }
  bool operator==(const VideoLatent& o) const = default;

  double squared_norm() const;
  double norm() const;
  bool all_finite() const;

 private:
  void check_same_shape(const VideoLatent& o, const char* what) const;

  std::size_t frames_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

struct ConditionCode {
  int content_id = 0;
  std::optional<int> style_id;
  bool is_null = false;

  static ConditionCode null() { return {0, std::nullopt, true}; }
  static ConditionCode make(int content, std::optional<int> style = std::nullopt) {
    return {content, style, false};
  }
  bool operator==(const ConditionCode&) const = default;
  std::string str() const;
};

struct SynthConfig {
  std::size_t frames = 8;
  std::size_t dim = 16;
  int n_content = 8;
  int n_styles = 16;
  double appearance_noise = 0.1;
  double style_norm = 2.0;
  std::uint64_t world_seed = 7;
  // Gaussian toy mode: x0 ~ N(mu0(c), sigma0^2 I) per frame, no temporal
  // structure.
  bool gaussian_toy = false;
  double toy_sigma0 = 0.5;

  std::size_t appearance_dim() const { return dim - kMotionDims; }
  bool operator==(const SynthConfig&) const = default;
};

// Fixed set of style vectors over the appearance dims, each rescaled to the
// same L2 norm.
class StyleLibrary {
 public:
  StyleLibrary(std::uint64_t seed, int count, std::size_t dims, double norm);

  int size() const { return static_cast<int>(embeddings_.size()); }
  std::size_t dims() const { return dims_; }
  std::span<const double> embedding(int style) const;
  double min_pairwise_distance() const;

 private:
  std::size_t dims_;
  std::vector<std::vector<double>> embeddings_;
};

struct Sample {
  VideoLatent video;
  ConditionCode code;
};

// The synthetic "world": content bases, motion parameters and the style
// library, all derived from SynthConfig::world_seed.
class SynthWorld {
 public:
  explicit SynthWorld(SynthConfig config);

  const SynthConfig& config() const { return config_; }
  const StyleLibrary& styles() const { return styles_; }

  std::span<const double> content_base(int content) const;

  // Video mode sample. Motion and appearance noise depend on (seed, content)
  // only, so changing the style moves the appearance channel alone.
  Sample gen_sample(std::uint64_t seed, int content, std::optional<int> style) const;

  // Gaussian toy mode.
  std::vector<double> toy_mean(const ConditionCode& code) const;
  Sample gen_toy_sample(std::uint64_t seed, const ConditionCode& code) const;

  // Shifts appearance by emb(to) - emb(from); nullopt means "no style".
  VideoLatent oracle_edit(const VideoLatent& video, std::optional<int> from_style,
                          std::optional<int> to_style) const;

  // Draws items independently. Fused styles come uniformly from
  // `style_pool` (all styles when empty).
  std::vector<Sample> sample_batch(CounterRng& rng, std::size_t batch_size, double style_fusion_prob,
                                   std::span<const int> style_pool = {}) const;

  void check_code(const ConditionCode& code) const;

 private:
  SynthConfig config_;
  StyleLibrary styles_;
  std::vector<std::vector<double>> bases_;
  std::vector<std::vector<double>> toy_motion_;
};

// Generated values live on this dyadic grid, which keeps style shifts and
// their inverses exact in floating point.
double quantize(double x);

}  // namespace propfly
