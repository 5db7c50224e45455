#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "propfly/adapter.hpp"
#include "propfly/gmfm.hpp"
#include "propfly/guidance.hpp"
#include "propfly/sampler.hpp"

namespace propfly {

// exp(-mean squared appearance error); 1 means exact match.
double style_alignment(const VideoLatent& edited, const VideoLatent& target);

struct MotionScore {
  double value = 0.0;
  bool degenerate = false;  // a displacement sequence had zero variance
};

// Pearson correlation of the flattened frame-to-frame motion displacements.
MotionScore motion_alignment(const VideoLatent& a, const VideoLatent& b);

// ||x_high - x_low|| / sqrt(F D)
double semantic_gap(const PairSample& pair);

struct MetricRow {
  std::string experiment;
  std::uint64_t seed = 0;
  std::size_t sample_id = 0;
  std::string metric;
  double value = 0.0;
};

struct MetricAggregate {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string metric;
  double mean = 0.0;
  std::size_t count = 0;
};

struct MetricReport {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;

  void add(std::string arm, std::uint64_t row_seed, std::size_t sample_id, std::string metric, double value);
  // One entry per (experiment, seed, metric), in first-seen order.
  std::vector<MetricAggregate> aggregates() const;
  // Mean over every row with this experiment and metric (all seeds).
  double mean(std::string_view arm, std::string_view metric) const;
  std::vector<double> values(std::string_view arm, std::string_view metric) const;
};

// Which caption drives propagation: the edited video's or the source's.
enum class EvalCaption { kTarget, kSource };
std::string_view eval_caption_name(EvalCaption caption);
EvalCaption parse_eval_caption(std::string_view name);

struct EvalConfig {
  std::size_t n_samples = 64;
  SamplerConfig sampler{};
  EvalCaption caption = EvalCaption::kTarget;
  std::size_t pair_trials = 200;  // pairs compared in the sampling ablation
  std::uint64_t seed = 1234;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

// One held-out edit: a source video, its oracle edit to a reserved style and
// the caption used for propagation.
struct EditCase {
  VideoLatent source;
  VideoLatent target;
  ConditionCode caption;
  std::optional<int> from_style;
  int to_style = 0;
};

std::vector<EditCase> held_out_edits(const SynthWorld& world, const EvalConfig& config, int held_out_styles);

// Generates the edited video from noise with the adapter conditioned on the
// source and the target's first frame.
VideoLatent propagate(const BackboneParams& theta, const AdapterParams& phi, const EditCase& edit,
                      const SamplerConfig& sampler, CounterRng noise);

struct PropagationScores {
  std::vector<double> propagated;  // style_alignment(propagated, target)
  std::vector<double> source;      // style_alignment(source, target)
  std::vector<double> motion;      // motion_alignment(propagated, source)
  double win_rate() const;
};

PropagationScores evaluate_propagation(const BackboneParams& theta, const AdapterParams& phi, const SynthWorld& world,
                                       const EvalConfig& config, int held_out_styles);

// Semantic gaps at each omega_high over shared (x_t, t, c_aug) draws; one row
// per draw, one column per omega.
struct GapSweep {
  std::vector<double> omegas;
  double omega_low = 1.0;
  std::vector<std::vector<double>> gaps;
  std::vector<double> mean_gaps() const;
};

GapSweep cfg_gap_sweep(const BackboneParams& theta, const SynthWorld& world, std::span<const double> omegas,
                       double omega_low, std::size_t draws, std::uint64_t seed);

// Least-squares slope through the origin and the max |residual|.
struct OriginFit {
  double slope = 0.0;
  double max_residual = 0.0;
};
OriginFit fit_through_origin(std::span<const double> x, std::span<const double> y);

// Motion alignment of (x_low, x_high) pairs from one-step estimation and from
// full sampling, on shared draws.
struct PairMotion {
  std::vector<double> one_step;
  std::vector<double> full_sampling;
};

PairMotion pair_motion_comparison(const BackboneParams& theta, const SynthWorld& world, const GuidanceConfig& guidance,
                                  std::size_t trials, std::size_t n_steps, std::uint64_t seed);

enum class Suite { kCfgSweep, kFullSamplingVsOneStep, kFmVsGmfm, kRspf };
std::string_view suite_name(Suite suite);
Suite parse_suite(std::string_view name);

inline constexpr double kSweepOmegas[] = {2.0, 5.0, 7.0, 10.0, 20.0};

struct AblationInputs {
  const BackboneParams* theta = nullptr;
  const SynthWorld* world = nullptr;
  TrainConfig train{};
  EvalConfig eval{};
  std::string config_hash;
};

MetricReport run_ablation(Suite suite, const AblationInputs& inputs, std::uint64_t seed);

}  // namespace propfly
