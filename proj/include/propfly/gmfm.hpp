#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "propfly/adapter.hpp"
#include "propfly/guidance.hpp"
#include "propfly/optim.hpp"
#include "propfly/sampler.hpp"

namespace propfly {

enum class TrainMode { kGmfm, kStandardFm, kPairedDataset, kGmfmNoRspf };
std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view name);

// Where the (x_low, x_high) pair comes from: one velocity evaluation per
// branch, or two full ODE integrations from x_t (the full-sampling baseline).
enum class PairSource { kOneStep, kFullSampling };
std::string_view pair_source_name(PairSource source);
PairSource parse_pair_source(std::string_view name);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double style_fusion_prob = 0.9;
  GuidanceConfig guidance{};
  double t_min = 0.02;
  double t_max = 0.98;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kGmfm;
  // Probability that a sampled training video already carries a style.
  double data_style_prob = 0.5;
  // The last `held_out_styles` style ids never appear during adapter training.
  int held_out_styles = 4;
  PairSource pair_source = PairSource::kOneStep;
  std::size_t full_sampling_steps = 25;

  void validate(int n_styles) const;
  double fusion_prob() const { return mode == TrainMode::kGmfmNoRspf ? 0.0 : style_fusion_prob; }
  AdamWConfig optimizer() const;
  bool operator==(const TrainConfig&) const = default;
};

std::vector<int> training_styles(int n_styles, int held_out);
std::vector<int> held_out_style_ids(int n_styles, int held_out);

// Sets the caption's style; an existing style is replaced.
ConditionCode rspf_fuse(const ConditionCode& caption, int style_id);

// Training captions for one step: each item's caption gets a style from
// `style_pool` with probability config.fusion_prob().
std::vector<ConditionCode> rspf_captions(std::span<const Sample> batch, const TrainConfig& config,
                                         std::span<const int> style_pool, std::size_t step);

// mse(v_{theta,phi}(x_t, t, c, pack), target) where the target must be a
// plain constant.
ad::Tensor gmfm_loss(const BackboneParams& theta, const AdapterParams& phi, const ad::Tensor& x_t, double t,
                     const ConditionCode& caption, const ConditionPack& pack, const ad::Tensor& target);
// The same loss on a generated pair: pack = {x_low, x_high row 0, c_aug},
// target = v_high, input = the pair's own x_t.
ad::Tensor gmfm_loss(const BackboneParams& theta, const AdapterParams& phi, const PairSample& pair);

// Pair built by integrating from x_t twice (omega_low and omega_high). v_high
// is still the high-guidance velocity at x_t.
PairSample full_sampling_pair(const BackboneParams& theta, std::shared_ptr<const VideoLatent> x_t, double t,
                              const ConditionCode& c_aug, const GuidanceConfig& cfg, std::size_t n_steps);

struct StepResult {
  double loss = 0.0;
  std::vector<ConditionCode> captions;  // c_aug per item
  // Latent identities seen by pair generation and by the loss.
  std::vector<const VideoLatent*> pair_x_t;
  std::vector<const VideoLatent*> loss_x_t;
};

// Runs the adapter training loop one step at a time. The backbone is shared
// and never written; phi is owned.
class AdapterTrainer {
 public:
  AdapterTrainer(const BackboneParams& theta, const SynthWorld& world, TrainConfig config, AdapterParams phi);

  StepResult step();

  std::size_t steps_done() const { return step_; }
  const AdapterParams& phi() const { return phi_; }
  const AdamW& optimizer() const { return optimizer_; }
  const TrainConfig& config() const { return config_; }

 private:
  ad::Tensor on_the_fly_loss(std::span<const Sample> batch, std::span<const ConditionCode> captions,
                             StepResult& result);
  ad::Tensor paired_dataset_loss(std::span<const Sample> batch, std::span<const ConditionCode> captions);

  const BackboneParams& theta_;
  const SynthWorld& world_;
  TrainConfig config_;
  AdapterParams phi_;
  AdamW optimizer_;
  std::vector<int> style_pool_;
  std::size_t step_ = 0;
};

struct TrainResult {
  AdapterParams phi;
  std::vector<double> loss_trace;
};

using StepCallback = std::function<void(std::size_t step, const StepResult& result, const AdapterTrainer& trainer)>;

TrainResult train_adapter(const BackboneParams& theta, const SynthWorld& world, const TrainConfig& config,
                          const StepCallback& on_step = {});

}  // namespace propfly
