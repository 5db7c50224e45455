#include <gtest/gtest.h>

#include <cmath>

#include "propfly/errors.hpp"
#include "propfly/eval.hpp"
#include "support.hpp"

namespace propfly {
namespace {

const SynthWorld& world() { return test::default_world(); }

TEST(StyleAlignment, ExactMatchAndMonotoneRamp) {
  const VideoLatent v = world().gen_sample(1, 2, 3).video;
  EXPECT_EQ(style_alignment(v, v), 1.0);
  double prev = 1.0;
  for (int k = 1; k <= 20; ++k) {
    VideoLatent w = v;
    for (std::size_t f = 0; f < w.frames(); ++f)
      for (std::size_t d = kMotionDims; d < w.dim(); ++d) w(f, d) += 0.25 * k;
    const double s = style_alignment(w, v);
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(StyleAlignment, OracleEditScoreFromEmbeddings) {
  const VideoLatent src = world().gen_sample(2, 4, 1).video;
  for (int b : {0, 5, 13}) {
    const VideoLatent target = world().oracle_edit(src, 1, b);
    const auto ea = world().styles().embedding(1), eb = world().styles().embedding(b);
    double d2 = 0.0;
    for (std::size_t k = 0; k < ea.size(); ++k) d2 += (eb[k] - ea[k]) * (eb[k] - ea[k]);
    EXPECT_NEAR(style_alignment(src, target), std::exp(-d2 / static_cast<double>(ea.size())), 1e-12);
  }
}

TEST(StyleAlignment, IgnoresMotionChannel) {
  const VideoLatent v = world().gen_sample(3, 0, 2).video;
  const VideoLatent t = world().oracle_edit(v, 2, 9);
  VideoLatent moved = v;
  for (std::size_t f = 0; f < v.frames(); ++f) moved(f, 0) += 3.0 * static_cast<double>(f);
  EXPECT_EQ(style_alignment(moved, t), style_alignment(v, t));
}

TEST(MotionAlignment, IdentityEditAndMirror) {
  const VideoLatent v = world().gen_sample(4, 6, std::nullopt).video;
  EXPECT_EQ(motion_alignment(v, v).value, 1.0);
  EXPECT_EQ(motion_alignment(v, world().oracle_edit(v, std::nullopt, 7)).value, 1.0);
  VideoLatent mirrored = v;
  for (std::size_t f = 0; f < v.frames(); ++f)
    for (std::size_t k = 0; k < kMotionDims; ++k) mirrored(f, k) = -v(f, k);
  EXPECT_NEAR(motion_alignment(v, mirrored).value, -1.0, 1e-12);
}

TEST(MotionAlignment, IgnoresAppearanceChannel) {
  const VideoLatent a = world().gen_sample(5, 1, std::nullopt).video;
  const VideoLatent b = world().gen_sample(6, 2, std::nullopt).video;
  CounterRng rng(1, Purpose::kTest);
  VideoLatent noisy = b;
  for (std::size_t f = 0; f < b.frames(); ++f)
    for (std::size_t k = kMotionDims; k < b.dim(); ++k) noisy(f, k) += rng.normal();
  EXPECT_EQ(motion_alignment(a, noisy).value, motion_alignment(a, b).value);
}

TEST(MotionAlignment, DegenerateAndShortInputs) {
  const VideoLatent still(8, 16, 0.5);
  const VideoLatent v = world().gen_sample(7, 3, std::nullopt).video;
  const MotionScore s = motion_alignment(still, v);
  EXPECT_EQ(s.value, 0.0);
  EXPECT_TRUE(s.degenerate);
  EXPECT_THROW(motion_alignment(VideoLatent(2, 16), VideoLatent(2, 16)), ContractError);
}

PairSample random_pair(CounterRng& rng, GuidanceConfig g) {
  return make_pair(std::make_shared<const VideoLatent>(test::random_latent(rng)), rng.uniform(0.02, 0.98),
                   ConditionCode::make(0, 1), test::random_latent(rng), test::random_latent(rng), g);
}

TEST(SemanticGap, ClosedForm) {
  CounterRng rng(2, Purpose::kTest);
  EXPECT_EQ(semantic_gap(random_pair(rng, {4.0, 4.0})), 0.0);
  for (int i = 0; i < 50; ++i) {
    const GuidanceConfig g{1.0, rng.uniform(2.0, 20.0)};
    const PairSample p = random_pair(rng, g);
    const double expected =
        p.t * (g.omega_high - g.omega_low) * (p.v_cond - p.v_uncond).norm() / std::sqrt(128.0);
    EXPECT_NEAR(semantic_gap(p), expected, 1e-10);
  }
}

TEST(GapSweep, LinearInGuidanceSpread) {
  const GapSweep sweep = cfg_gap_sweep(test::small_backbone(), world(), kSweepOmegas, 1.0, 200, 5);
  ASSERT_EQ(sweep.gaps.size(), 200u);
  const auto means = sweep.mean_gaps();
  EXPECT_NEAR(means[4] / means[2], (20.0 - 1.0) / (7.0 - 1.0), 1e-6);
  std::vector<double> spread;
  for (double w : kSweepOmegas) spread.push_back(w - 1.0);
  const OriginFit fit = fit_through_origin(spread, means);
  EXPECT_GT(fit.slope, 0.0);
  EXPECT_LT(fit.max_residual, 1e-9);
}

TEST(FitThroughOrigin, RecoversSlope) {
  const std::vector<double> x = {1, 2, 3}, y = {2.5, 5.0, 7.5};
  const OriginFit f = fit_through_origin(x, y);
  EXPECT_DOUBLE_EQ(f.slope, 2.5);
  EXPECT_LT(f.max_residual, 1e-15);
  EXPECT_THROW(fit_through_origin(std::vector<double>{0.0}, std::vector<double>{1.0}), ContractError);
}

TEST(MetricReportAggregates, MeansMatchRows) {
  MetricReport r;
  CounterRng rng(3, Purpose::kTest);
  for (std::uint64_t seed : {1, 2})
    for (std::size_t i = 0; i < 17; ++i) {
      r.add("a", seed, i, "m1", rng.normal());
      r.add("b", seed, i, "m2", rng.uniform());
    }
  const auto aggs = r.aggregates();
  ASSERT_EQ(aggs.size(), 4u);
  for (const auto& a : aggs) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& row : r.rows)
      if (row.experiment == a.experiment && row.seed == a.seed && row.metric == a.metric) {
        s += row.value;
        ++n;
      }
    EXPECT_EQ(a.count, n);
    EXPECT_NEAR(a.mean, s / static_cast<double>(n), 1e-12);
  }
  EXPECT_EQ(r.values("a", "m1").size(), 34u);
  EXPECT_THROW(r.mean("a", "m2"), ContractError);
}

TEST(HeldOutEdits, ReservedTargetsAndDeterminism) {
  EvalConfig cfg;
  const auto a = held_out_edits(world(), cfg, 4);
  const auto b = held_out_edits(world(), cfg, 4);
  ASSERT_EQ(a.size(), 64u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_GE(a[i].to_style, 12);
    if (a[i].from_style) EXPECT_LT(*a[i].from_style, 12);
    EXPECT_EQ(a[i].caption.style_id, std::optional<int>(a[i].to_style));
    EXPECT_EQ(a[i].target, b[i].target);
    EXPECT_EQ(a[i].target, world().oracle_edit(a[i].source, a[i].from_style, a[i].to_style));
  }
  cfg.caption = EvalCaption::kSource;
  const auto c = held_out_edits(world(), cfg, 4);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i].caption.style_id, c[i].from_style);
}

TEST(Propagation, DeterministicScores) {
  EvalConfig cfg;
  cfg.n_samples = 4;
  const AdapterParams phi = test::active_adapter(test::small_backbone().config, 3);
  const auto a = evaluate_propagation(test::small_backbone(), phi, world(), cfg, 4);
  const auto b = evaluate_propagation(test::small_backbone(), phi, world(), cfg, 4);
  EXPECT_EQ(a.propagated, b.propagated);
  EXPECT_EQ(a.motion, b.motion);
  EXPECT_GE(a.win_rate(), 0.0);
  EXPECT_LE(a.win_rate(), 1.0);
}

TEST(PairMotion, SharedDrawsAndRange) {
  const PairMotion pm = pair_motion_comparison(test::small_backbone(), world(), GuidanceConfig{}, 8, 25, 9);
  ASSERT_EQ(pm.one_step.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_LE(std::abs(pm.one_step[i]), 1.0 + 1e-12);
    EXPECT_LE(std::abs(pm.full_sampling[i]), 1.0 + 1e-12);
  }
}

TEST(Ablation, ReportsArmsDeterministically) {
  AblationInputs in;
  in.theta = &test::small_backbone();
  in.world = &world();
  in.train.steps = 2;
  in.train.batch_size = 2;
  in.eval.n_samples = 2;
  in.eval.pair_trials = 4;
  in.config_hash = "abc";
  for (Suite s : {Suite::kFmVsGmfm, Suite::kRspf, Suite::kFullSamplingVsOneStep}) {
    const MetricReport a = run_ablation(s, in, 1);
    const MetricReport b = run_ablation(s, in, 1);
    ASSERT_EQ(a.rows.size(), b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].value, b.rows[i].value);
    EXPECT_EQ(a.experiment, suite_name(s));
    EXPECT_EQ(a.config_hash, "abc");
  }
  const MetricReport fm = run_ablation(Suite::kFmVsGmfm, in, 1);
  EXPECT_EQ(fm.values("gmfm", "style_alignment").size(), 2u);
  EXPECT_EQ(fm.values("standard_fm", "style_alignment").size(), 2u);
  AblationInputs missing;
  EXPECT_THROW(run_ablation(Suite::kRspf, missing, 1), ContractError);
}

TEST(Names, RoundTrip) {
  for (Suite s : {Suite::kCfgSweep, Suite::kFullSamplingVsOneStep, Suite::kFmVsGmfm, Suite::kRspf})
    EXPECT_EQ(parse_suite(suite_name(s)), s);
  EXPECT_THROW(parse_suite("nope"), ConfigError);
  EXPECT_EQ(parse_eval_caption(eval_caption_name(EvalCaption::kSource)), EvalCaption::kSource);
}

}  // namespace
}  // namespace propfly
