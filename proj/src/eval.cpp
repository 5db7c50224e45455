#include "propfly/eval.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "propfly/errors.hpp"
#include "propfly/parallel.hpp"

namespace propfly {

double style_alignment(const VideoLatent& edited, const VideoLatent& target) {
  if (edited.frames() != target.frames() || edited.dim() != target.dim())
    throw ShapeError("style_alignment: shapes differ");
  if (edited.dim() <= kMotionDims) throw ShapeError("style_alignment: latent has no appearance dims");
  double acc = 0.0;
  for (std::size_t f = 0; f < edited.frames(); ++f)
    for (std::size_t d = kMotionDims; d < edited.dim(); ++d) {
      const double e = edited(f, d) - target(f, d);
      acc += e * e;
    }
  return std::exp(-acc / static_cast<double>(edited.frames() * (edited.dim() - kMotionDims)));
}

namespace {

std::vector<double> displacements(const VideoLatent& v) {
  std::vector<double> out;
  out.reserve((v.frames() - 1) * kMotionDims);
  for (std::size_t f = 0; f + 1 < v.frames(); ++f)
    for (std::size_t d = 0; d < kMotionDims; ++d) out.push_back(v(f + 1, d) - v(f, d));
  return out;
}

}  // namespace

MotionScore motion_alignment(const VideoLatent& a, const VideoLatent& b) {
  if (a.frames() < 3 || b.frames() < 3) throw ContractError("motion_alignment: needs at least 3 frames");
  if (a.frames() != b.frames() || a.dim() < kMotionDims || b.dim() < kMotionDims)
    throw ShapeError("motion_alignment: frame counts differ");
  const auto x = displacements(a);
  const auto y = displacements(b);
  if (x == y) return {1.0, false};
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {sxy / std::sqrt(sxx * syy), false};
}

double semantic_gap(const PairSample& pair) {
  return (pair.x_high - pair.x_low).norm() / std::sqrt(static_cast<double>(pair.x_high.size()));
}

void MetricReport::add(std::string arm, std::uint64_t row_seed, std::size_t sample_id, std::string metric,
                       double value) {
  rows.push_back({std::move(arm), row_seed, sample_id, std::move(metric), value});
}

std::vector<MetricAggregate> MetricReport::aggregates() const {
  std::vector<MetricAggregate> out;
  std::map<std::tuple<std::string, std::uint64_t, std::string>, std::size_t> index;
  std::vector<double> sums;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.experiment, r.seed, r.metric);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({r.experiment, r.seed, r.metric, 0.0, 0});
      sums.push_back(0.0);
    }
    sums[it->second] += r.value;
    ++out[it->second].count;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].mean = sums[i] / static_cast<double>(out[i].count);
  return out;
}

std::vector<double> MetricReport::values(std::string_view arm, std::string_view metric) const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.experiment == arm && r.metric == metric) out.push_back(r.value);
  return out;
}

double MetricReport::mean(std::string_view arm, std::string_view metric) const {
  const auto v = values(arm, metric);
  if (v.empty())
    throw ContractError("report has no rows for " + std::string(arm) + "/" + std::string(metric));
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string_view eval_caption_name(EvalCaption caption) {
  return caption == EvalCaption::kTarget ? "target" : "source";
}

EvalCaption parse_eval_caption(std::string_view name) {
  if (name == "target") return EvalCaption::kTarget;
  if (name == "source") return EvalCaption::kSource;
  throw ConfigError("unknown eval caption '" + std::string(name) + "'");
}

void EvalConfig::validate() const {
  if (n_samples < 1) throw ConfigError("eval.n_samples must be >= 1");
  if (pair_trials < 1) throw ConfigError("eval.pair_trials must be >= 1");
  if (sampler.n_steps < 1) throw ConfigError("sampler.n_steps must be >= 1");
}

std::vector<EditCase> held_out_edits(const SynthWorld& world, const EvalConfig& config, int held_out_styles) {
  const int S = world.config().n_styles;
  const auto train = training_styles(S, held_out_styles);
  const auto reserved = held_out_style_ids(S, held_out_styles);
  if (reserved.empty()) throw ConfigError("held-out evaluation needs at least one reserved style");
  std::vector<EditCase> out;
  out.reserve(config.n_samples);
  for (std::size_t i = 0; i < config.n_samples; ++i) {
    CounterRng rng(config.seed, Purpose::kEval, i);
    const std::uint64_t seed = rng.next_u64();
    const int content = static_cast<int>(rng.below(static_cast<std::uint64_t>(world.config().n_content)));
    EditCase e;
    if (rng.bernoulli(0.5)) e.from_style = train[rng.below(train.size())];
    e.to_style = reserved[rng.below(reserved.size())];
    e.source = world.gen_sample(seed, content, e.from_style).video;
    e.target = world.oracle_edit(e.source, e.from_style, e.to_style);
    e.caption = config.caption == EvalCaption::kTarget ? ConditionCode::make(content, e.to_style)
                                                       : ConditionCode::make(content, e.from_style);
    out.push_back(std::move(e));
  }
  return out;
}

VideoLatent propagate(const BackboneParams& theta, const AdapterParams& phi, const EditCase& edit,
                      const SamplerConfig& sampler, CounterRng noise) {
  const ConditionPack pack = ConditionPack::from_pair(edit.source, edit.target, edit.caption);
  const VelocityFn v = [&](const VideoLatent& x, double t, const ConditionCode& c) {
    if (c.is_null) return velocity(theta, x, t, c);
    return joint_velocity(theta, phi, x, t, c, pack);
  };
  VideoLatent x1(edit.source.frames(), edit.source.dim());
  for (double& x : x1.data()) x = noise.normal();
  return ode_sample(v, x1, edit.caption, sampler);
}

double PropagationScores::win_rate() const {
  if (propagated.empty()) return 0.0;
  std::size_t wins = 0;
  for (std::size_t i = 0; i < propagated.size(); ++i)
    if (propagated[i] > source[i]) ++wins;
  return static_cast<double>(wins) / static_cast<double>(propagated.size());
}

PropagationScores evaluate_propagation(const BackboneParams& theta, const AdapterParams& phi, const SynthWorld& world,
                                       const EvalConfig& config, int held_out_styles) {
  config.validate();
  const auto edits = held_out_edits(world, config, held_out_styles);
  PropagationScores s;
  s.propagated.resize(edits.size());
  s.source.resize(edits.size());
  s.motion.resize(edits.size());
  parallel_for(edits.size(), [&](std::size_t i) {
    const VideoLatent out =
        propagate(theta, phi, edits[i], config.sampler, CounterRng(config.seed, Purpose::kNoise, i));
    s.propagated[i] = style_alignment(out, edits[i].target);
    s.source[i] = style_alignment(edits[i].source, edits[i].target);
    s.motion[i] = motion_alignment(out, edits[i].source).value;
  });
  return s;
}

std::vector<double> GapSweep::mean_gaps() const {
  std::vector<double> m(omegas.size(), 0.0);
  for (const auto& row : gaps)
    for (std::size_t k = 0; k < row.size(); ++k) m[k] += row[k];
  for (double& x : m) x /= static_cast<double>(gaps.size());
  return m;
}

namespace {

// A training-distribution draw: data video, fused caption, t and x_t.
struct PairDraw {
  std::shared_ptr<const VideoLatent> x_t;
  double t = 0.0;
  ConditionCode c_aug;
};

PairDraw draw_pair_input(const SynthWorld& world, std::uint64_t seed, std::size_t index) {
  CounterRng rng(seed, Purpose::kAblation, index);
  const int C = world.config().n_content, S = world.config().n_styles;
  const std::uint64_t sample_seed = rng.next_u64();
  const int content = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
  std::optional<int> style;
  if (rng.bernoulli(0.5)) style = static_cast<int>(rng.below(static_cast<std::uint64_t>(S)));
  const Sample s = world.gen_sample(sample_seed, content, style);
  PairDraw d;
  d.c_aug = rspf_fuse(s.code, static_cast<int>(rng.below(static_cast<std::uint64_t>(S))));
  d.t = rng.uniform(0.02, 0.98);
  VideoLatent x1(s.video.frames(), s.video.dim());
  for (double& x : x1.data()) x = rng.normal();
  d.x_t = std::make_shared<const VideoLatent>(interp_noise(s.video, x1, d.t));
  return d;
}

}  // namespace

GapSweep cfg_gap_sweep(const BackboneParams& theta, const SynthWorld& world, std::span<const double> omegas,
                       double omega_low, std::size_t draws, std::uint64_t seed) {
  GapSweep sweep;
  sweep.omegas.assign(omegas.begin(), omegas.end());
  sweep.omega_low = omega_low;
  sweep.gaps.assign(draws, std::vector<double>(omegas.size()));
  parallel_for(draws, [&](std::size_t i) {
    const PairDraw d = draw_pair_input(world, seed, i);
    const VideoLatent v_uncond = velocity(theta, *d.x_t, d.t, ConditionCode::null());
    const VideoLatent v_cond = velocity(theta, *d.x_t, d.t, d.c_aug);
    for (std::size_t k = 0; k < omegas.size(); ++k) {
      const PairSample p = make_pair(d.x_t, d.t, d.c_aug, v_cond, v_uncond, {omega_low, omegas[k]});
      sweep.gaps[i][k] = semantic_gap(p);
    }
  });
  return sweep;
}

OriginFit fit_through_origin(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw ContractError("fit_through_origin: need equal, non-empty series");
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  if (sxx == 0.0) throw ContractError("fit_through_origin: x is all zero");
  OriginFit fit{sxy / sxx, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) fit.max_residual = std::max(fit.max_residual, std::abs(y[i] - fit.slope * x[i]));
  return fit;
}

PairMotion pair_motion_comparison(const BackboneParams& theta, const SynthWorld& world, const GuidanceConfig& guidance,
                                  std::size_t trials, std::size_t n_steps, std::uint64_t seed) {
  PairMotion out;
  out.one_step.resize(trials);
  out.full_sampling.resize(trials);
  parallel_for(trials, [&](std::size_t i) {
    const PairDraw d = draw_pair_input(world, seed, i);
    const PairSample one = gen_pair(theta, d.x_t, d.t, d.c_aug, guidance);
    const PairSample full = full_sampling_pair(theta, d.x_t, d.t, d.c_aug, guidance, n_steps);
    out.one_step[i] = motion_alignment(one.x_low, one.x_high).value;
    out.full_sampling[i] = motion_alignment(full.x_low, full.x_high).value;
  });
  return out;
}

std::string_view suite_name(Suite suite) {
  switch (suite) {
    case Suite::kCfgSweep: return "cfg_sweep";
    case Suite::kFullSamplingVsOneStep: return "fullsampling_vs_onestep";
    case Suite::kFmVsGmfm: return "fm_vs_gmfm";
    case Suite::kRspf: return "rspf";
  }
  return "unknown";
}

Suite parse_suite(std::string_view name) {
  for (Suite s : {Suite::kCfgSweep, Suite::kFullSamplingVsOneStep, Suite::kFmVsGmfm, Suite::kRspf})
    if (suite_name(s) == name) return s;
  throw ConfigError("unknown ablation suite '" + std::string(name) + "'");
}

namespace {

std::string omega_arm(double omega) {
  std::ostringstream os;
  os << "omega_high=" << omega;
  return os.str();
}

void add_propagation(MetricReport& report, const std::string& arm, std::uint64_t seed, const PropagationScores& s) {
  for (std::size_t i = 0; i < s.propagated.size(); ++i) {
    report.add(arm, seed, i, "style_alignment", s.propagated[i]);
    report.add(arm, seed, i, "source_style_alignment", s.source[i]);
    report.add(arm, seed, i, "motion_alignment", s.motion[i]);
  }
}

void train_and_score(MetricReport& report, const AblationInputs& in, const std::string& arm, TrainConfig train,
                     std::uint64_t seed) {
  train.seed = seed;
  const TrainResult r = train_adapter(*in.theta, *in.world, train);
  add_propagation(report, arm, seed,
                  evaluate_propagation(*in.theta, r.phi, *in.world, in.eval, train.held_out_styles));
}

}  // namespace

MetricReport run_ablation(Suite suite, const AblationInputs& in, std::uint64_t seed) {
  if (!in.theta || !in.world) throw ContractError("run_ablation: backbone and world are required");
  MetricReport report;
  report.experiment = std::string(suite_name(suite));
  report.config_hash = in.config_hash;
  report.seed = seed;
  switch (suite) {
    case Suite::kCfgSweep: {
      const GapSweep sweep = cfg_gap_sweep(*in.theta, *in.world, kSweepOmegas, in.train.guidance.omega_low,
                                           in.eval.pair_trials, seed);
      for (std::size_t k = 0; k < sweep.omegas.size(); ++k) {
        const std::string arm = omega_arm(sweep.omegas[k]);
        for (std::size_t i = 0; i < sweep.gaps.size(); ++i) report.add(arm, seed, i, "semantic_gap", sweep.gaps[i][k]);
        TrainConfig train = in.train;
        train.guidance.omega_high = sweep.omegas[k];
        train_and_score(report, in, arm, train, seed);
      }
      break;
    }
    case Suite::kFullSamplingVsOneStep: {
      const PairMotion pm = pair_motion_comparison(*in.theta, *in.world, in.train.guidance, in.eval.pair_trials,
                                                   in.train.full_sampling_steps, seed);
      for (std::size_t i = 0; i < pm.one_step.size(); ++i) {
        report.add("one_step", seed, i, "pair_motion_alignment", pm.one_step[i]);
        report.add("full_sampling", seed, i, "pair_motion_alignment", pm.full_sampling[i]);
      }
      TrainConfig train = in.train;
      train.pair_source = PairSource::kOneStep;
      train_and_score(report, in, "one_step", train, seed);
      train.pair_source = PairSource::kFullSampling;
      train_and_score(report, in, "full_sampling", train, seed);
      break;
    }
    case Suite::kFmVsGmfm: {
      TrainConfig train = in.train;
      train.mode = TrainMode::kGmfm;
      train_and_score(report, in, "gmfm", train, seed);
      train.mode = TrainMode::kStandardFm;
      train_and_score(report, in, "standard_fm", train, seed);
      break;
    }
    case Suite::kRspf: {
      TrainConfig train = in.train;
      train.mode = TrainMode::kGmfm;
      train_and_score(report, in, "gmfm", train, seed);
      train.mode = TrainMode::kGmfmNoRspf;
      train_and_score(report, in, "gmfm_no_rspf", train, seed);
      break;
    }
  }
  return report;
}

}  // namespace propfly
