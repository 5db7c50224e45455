#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "propfly/optim.hpp"
#include "propfly/param_store.hpp"
#include "propfly/synthvid.hpp"

namespace propfly {

struct BackboneConfig {
  std::size_t frames = 8;
  std::size_t dim = 16;
  int n_content = 8;
  int n_styles = 16;
  std::size_t n_blocks = 6;
  std::size_t width = 64;
  std::size_t time_embed_dim = 16;
  std::size_t cond_embed_dim = 32;
  std::size_t fourier_pairs = 8;
  std::size_t s_in = 2;  // adapter injection stride

  void validate() const;
  std::size_t adapter_blocks() const { return n_blocks / s_in; }
  bool operator==(const BackboneConfig&) const = default;
};

// Velocity network parameters (theta). Once frozen, every tensor stops
// requiring grad, so no backward pass can accumulate into them.
struct BackboneParams {
  BackboneConfig config;
  ParamStore store;
  bool frozen = false;

  const ad::Tensor& operator[](std::string_view name) const { return store.get(name); }
  void freeze();
};

BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed);
// Rebuilds params from a store (e.g. a loaded checkpoint); validates names and shapes.
BackboneParams backbone_from_store(const BackboneConfig& config, const ParamStore& store, bool frozen);

// (1 - t) x0 + t x1
VideoLatent interp_noise(const VideoLatent& x0, const VideoLatent& x1, double t);

// 2 * fourier_pairs features of t.
std::vector<double> fourier_features(double t, std::size_t pairs);

// Conditioning vector (1 x width): Fourier time features and the condition
// embedding (content + style, or null) passed through a two-layer GELU MLP.
// Every block adds its own projection of this vector to its input.
ad::Tensor backbone_embedding(const BackboneParams& params, double t, const ConditionCode& c);

// Graph-level forward. `injections`, when non-empty, holds one F x width
// tensor per adapter block; injection j is added to the hidden state right
// after block (j + 1) * s_in - 1. `trace` receives the hidden state after
// every block (post-injection).
ad::Tensor backbone_forward(const BackboneParams& params, const ad::Tensor& x_t, const ad::Tensor& embedding,
                            std::span<const ad::Tensor> injections = {},
                            std::vector<ad::Tensor>* trace = nullptr);

ad::Tensor velocity_graph(const BackboneParams& params, const ad::Tensor& x_t, double t,
                          const ConditionCode& c);

// v_theta(x_t, t, c) without recording anything.
VideoLatent velocity(const BackboneParams& params, const VideoLatent& x_t, double t, const ConditionCode& c);

// Per-item randomness of one flow-matching evaluation.
struct FmDraw {
  double t = 0.0;
  VideoLatent x1;
  bool dropped = false;
};

std::vector<FmDraw> draw_fm(std::span<const Sample> batch, CounterRng& rng, double p_drop);

// Graph-level velocity used by the FM loss: (x_t, t, condition, batch index).
using VelocityGraphFn =
    std::function<ad::Tensor(const ad::Tensor& x_t, double t, const ConditionCode& c, std::size_t item)>;

// mean over the batch of mse((x1 - x0), v(x_t, t, c)).
ad::Tensor fm_loss(const VelocityGraphFn& velocity_fn, std::span<const Sample> batch, std::span<const FmDraw> draws);
ad::Tensor fm_loss(const BackboneParams& params, std::span<const Sample> batch, CounterRng& rng, double p_drop);

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double p_drop = 0.1;
  // Probability a pretraining video carries a style (caption echoes it).
  double data_style_prob = 0.5;
  AdamWConfig optimizer{};
  std::uint64_t seed = 1;

  bool operator==(const PretrainConfig&) const = default;
};

struct PretrainResult {
  BackboneParams params;  // frozen
  std::vector<double> loss_trace;
  double cfg_margin = 0.0;  // cfg_informativeness of the frozen params
};

// Pretraining fails its postcondition below this CFG informativeness.
inline constexpr double kMinCfgMargin = 0.05;

PretrainResult pretrain(const BackboneConfig& config, const SynthWorld& world, const PretrainConfig& pcfg);

// Mean Frobenius norm ||v(x_t, t, c_styled) - v(x_t, t, null)|| over
// `draws` random (x_t, t, styled condition) triples.
double cfg_informativeness(const BackboneParams& params, const SynthWorld& world, std::uint64_t seed,
                           std::size_t draws = 500);

}  // namespace propfly
