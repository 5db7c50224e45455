#include "propfly/gmfm.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "propfly/errors.hpp"
#include "propfly/parallel.hpp"

namespace propfly {

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kGmfm: return "gmfm";
    case TrainMode::kStandardFm: return "standard_fm";
    case TrainMode::kPairedDataset: return "paired_dataset";
    case TrainMode::kGmfmNoRspf: return "gmfm_no_rspf";
  }
  return "unknown";
}

TrainMode parse_mode(std::string_view name) {
  for (TrainMode m : {TrainMode::kGmfm, TrainMode::kStandardFm, TrainMode::kPairedDataset, TrainMode::kGmfmNoRspf})
    if (mode_name(m) == name) return m;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

std::string_view pair_source_name(PairSource source) {
  return source == PairSource::kOneStep ? "one_step" : "full_sampling";
}

PairSource parse_pair_source(std::string_view name) {
  if (name == "one_step") return PairSource::kOneStep;
  if (name == "full_sampling") return PairSource::kFullSampling;
  throw ConfigError("unknown pair source '" + std::string(name) + "'");
}

void TrainConfig::validate(int n_styles) const {
  if (steps < 1) throw ConfigError("train.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(style_fusion_prob >= 0.0 && style_fusion_prob <= 1.0))
    throw ConfigError("train.style_fusion_prob outside [0, 1]");
  if (!(data_style_prob >= 0.0 && data_style_prob <= 1.0)) throw ConfigError("train.data_style_prob outside [0, 1]");
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) throw ConfigError("train time clamp must satisfy 0 < t_min < t_max < 1");
  if (held_out_styles < 0 || held_out_styles >= n_styles)
    throw ConfigError("train.held_out_styles must leave at least one training style");
  if (full_sampling_steps < 1) throw ConfigError("train.full_sampling_steps must be >= 1");
  guidance.validate();
}

AdamWConfig TrainConfig::optimizer() const {
  AdamWConfig c;
  c.lr = lr;
  c.weight_decay = weight_decay;
  return c;
}

std::vector<int> training_styles(int n_styles, int held_out) {
  std::vector<int> ids;
  for (int s = 0; s < n_styles - held_out; ++s) ids.push_back(s);
  return ids;
}

std::vector<int> held_out_style_ids(int n_styles, int held_out) {
  std::vector<int> ids;
  for (int s = n_styles - held_out; s < n_styles; ++s) ids.push_back(s);
  return ids;
}

ConditionCode rspf_fuse(const ConditionCode& caption, int style_id) {
  if (caption.is_null) throw ContractError("rspf_fuse: caption must not be null");
  return ConditionCode::make(caption.content_id, style_id);
}

std::vector<ConditionCode> rspf_captions(std::span<const Sample> batch, const TrainConfig& config,
                                         std::span<const int> style_pool, std::size_t step) {
  if (style_pool.empty()) throw ContractError("rspf_captions: empty style pool");
  CounterRng rng(config.seed, Purpose::kRspf, step);
  const double p_fuse = config.fusion_prob();
  std::vector<ConditionCode> captions;
  captions.reserve(batch.size());
  for (const auto& s : batch) {
    ConditionCode c = s.code;
    if (rng.bernoulli(p_fuse)) c = rspf_fuse(c, style_pool[rng.below(style_pool.size())]);
    captions.push_back(c);
  }
  return captions;
}

ad::Tensor gmfm_loss(const BackboneParams& theta, const AdapterParams& phi, const ad::Tensor& x_t, double t,
                     const ConditionCode& caption, const ConditionPack& pack, const ad::Tensor& target) {
  if (target.requires_grad()) throw ContractError("gmfm_loss: target carries gradient; detach it first");
  return ad::mse(joint_velocity_graph(theta, phi, x_t, t, caption, pack), target);
}

ad::Tensor gmfm_loss(const BackboneParams& theta, const AdapterParams& phi, const PairSample& pair) {
  if (!pair.x_t) throw ContractError("gmfm_loss: pair has no x_t");
  const ConditionPack pack = ConditionPack::from_pair(pair.x_low, pair.x_high, pair.c_aug);
  return gmfm_loss(theta, phi, pair.x_t->to_tensor(), pair.t, pair.c_aug, pack, pair.v_high.to_tensor());
}

PairSample full_sampling_pair(const BackboneParams& theta, std::shared_ptr<const VideoLatent> x_t, double t,
                              const ConditionCode& c_aug, const GuidanceConfig& cfg, std::size_t n_steps) {
  PairSample p = gen_pair(theta, x_t, t, c_aug, cfg);
  const VelocityFn v = [&](const VideoLatent& x, double tt, const ConditionCode& c) {
    return velocity(theta, x, tt, c);
  };
  SamplerConfig low{n_steps, SamplerMethod::kEuler, cfg.omega_low};
  SamplerConfig high{n_steps, SamplerMethod::kEuler, cfg.omega_high};
  p.x_low = partial_sample(v, *x_t, t, c_aug, low);
  p.x_high = partial_sample(v, *x_t, t, c_aug, high);
  return p;
}

AdapterTrainer::AdapterTrainer(const BackboneParams& theta, const SynthWorld& world, TrainConfig config,
                               AdapterParams phi)
    : theta_(theta),
      world_(world),
      config_(std::move(config)),
      phi_(std::move(phi)),
      optimizer_(phi_.store, config_.optimizer()) {
  if (!theta_.frozen) throw ContractError("adapter training needs a frozen backbone");
  config_.validate(world_.config().n_styles);
  if (world_.config().frames != theta_.config.frames || world_.config().dim != theta_.config.dim)
    throw ConfigError("adapter training: backbone and data latent shapes differ");
  style_pool_ = training_styles(world_.config().n_styles, config_.held_out_styles);
}

ad::Tensor AdapterTrainer::on_the_fly_loss(std::span<const Sample> batch, std::span<const ConditionCode> captions,
                                           StepResult& result) {
  const std::size_t B = batch.size();
  CounterRng time_rng(config_.seed, Purpose::kTime, step_);
  CounterRng noise_rng(config_.seed, Purpose::kNoise, step_);
  std::vector<std::shared_ptr<const VideoLatent>> x_t(B);
  std::vector<double> t(B);
  for (std::size_t i = 0; i < B; ++i) {
    t[i] = time_rng.uniform(config_.t_min, config_.t_max);
    VideoLatent x1(batch[i].video.frames(), batch[i].video.dim());
    for (double& v : x1.data()) v = noise_rng.normal();
    x_t[i] = std::make_shared<const VideoLatent>(interp_noise(batch[i].video, x1, t[i]));
  }

  std::vector<PairSample> pairs;
  if (config_.pair_source == PairSource::kOneStep) {
    pairs = gen_pairs(theta_, x_t, t, captions, config_.guidance);
  } else {
    pairs.resize(B);
    parallel_for(B, [&](std::size_t i) {
      pairs[i] = full_sampling_pair(theta_, x_t[i], t[i], captions[i], config_.guidance, config_.full_sampling_steps);
    });
  }

  ad::Tensor total;
  for (std::size_t i = 0; i < B; ++i) {
    const PairSample& pair = pairs[i];
    result.pair_x_t.push_back(pair.x_t.get());
    ad::Tensor item;
    if (config_.mode == TrainMode::kStandardFm) {
      // Fresh noise and time; the path runs from x_high instead of x0.
      const double t2 = time_rng.uniform(config_.t_min, config_.t_max);
      VideoLatent x1(pair.x_high.frames(), pair.x_high.dim());
      for (double& v : x1.data()) v = noise_rng.normal();
      const VideoLatent x_t2 = interp_noise(pair.x_high, x1, t2);
      const ConditionPack pack = ConditionPack::from_pair(pair.x_low, pair.x_high, pair.c_aug);
      result.loss_x_t.push_back(nullptr);
      item = gmfm_loss(theta_, phi_, x_t2.to_tensor(), t2, pair.c_aug, pack, (x1 - pair.x_high).to_tensor());
    } else {
      result.loss_x_t.push_back(pair.x_t.get());
      item = gmfm_loss(theta_, phi_, pair);
    }
    total = total.defined() ? ad::add(total, item) : item;
  }
  return ad::scale(total, 1.0 / static_cast<double>(B));
}

ad::Tensor AdapterTrainer::paired_dataset_loss(std::span<const Sample> batch,
                                               std::span<const ConditionCode> captions) {
  CounterRng time_rng(config_.seed, Purpose::kTime, step_);
  CounterRng noise_rng(config_.seed, Purpose::kNoise, step_);
  ad::Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = batch[i];
    const VideoLatent target = world_.oracle_edit(s.video, s.code.style_id, captions[i].style_id);
    const double t = time_rng.uniform(config_.t_min, config_.t_max);
    VideoLatent x1(target.frames(), target.dim());
    for (double& v : x1.data()) v = noise_rng.normal();
    const VideoLatent x_t = interp_noise(target, x1, t);
    const ConditionPack pack = ConditionPack::from_pair(s.video, target, captions[i]);
    const ad::Tensor item =
        gmfm_loss(theta_, phi_, x_t.to_tensor(), t, captions[i], pack, (x1 - target).to_tensor());
    total = total.defined() ? ad::add(total, item) : item;
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

StepResult AdapterTrainer::step() {
  CounterRng data_rng(config_.seed, Purpose::kDataset, step_);
  const auto batch = world_.sample_batch(data_rng, config_.batch_size, config_.data_style_prob, style_pool_);

  StepResult result;
  result.captions = rspf_captions(batch, config_, style_pool_, step_);

  ad::Tape tape;
  ad::TapeScope scope(tape);
  const ad::Tensor loss = config_.mode == TrainMode::kPairedDataset
                              ? paired_dataset_loss(batch, result.captions)
                              : on_the_fly_loss(batch, result.captions, result);
  result.loss = loss.item();
  if (!std::isfinite(result.loss))
    throw NumericsError("adapter training: non-finite loss at step " + std::to_string(step_));
  ad::backward(loss);
  optimizer_.step();
  ++step_;
  return result;
}

TrainResult train_adapter(const BackboneParams& theta, const SynthWorld& world, const TrainConfig& config,
                          const StepCallback& on_step) {
  AdapterTrainer trainer(theta, world, config, init_adapter(theta.config, config.seed));
  TrainResult out;
  out.loss_trace.reserve(config.steps);
  for (std::size_t s = 0; s < config.steps; ++s) {
    const StepResult r = trainer.step();
    out.loss_trace.push_back(r.loss);
    if (on_step) on_step(s, r, trainer);
  }
  out.phi = trainer.phi();
  return out;
}

}  // namespace propfly
