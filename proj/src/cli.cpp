#include "propfly/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "propfly/checkpoint.hpp"
#include "propfly/errors.hpp"

namespace propfly {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, const char* what) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw IOError(std::string("metrics CSV: bad ") + what + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::string metrics_csv(const MetricReport& report) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : report.rows)
    out += r.experiment + "," + std::to_string(r.seed) + "," + std::to_string(r.sample_id) + "," + r.metric + "," +
           num(r.value) + "\n";
  for (const auto& a : report.aggregates())
    out += a.experiment + "," + std::to_string(a.seed) + ",mean," + a.metric + "," + num(a.mean) + "\n";
  return out;
}

MetricReport parse_metrics_csv(std::string_view text) {
  MetricReport report;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    if (header) {
      if (line != kMetricsHeader) throw IOError("metrics CSV: unexpected header '" + std::string(line) + "'");
      header = false;
      continue;
    }
    const auto cols = split_csv_line(line);
    if (cols.size() != 5) throw IOError("metrics CSV: expected 5 columns in '" + std::string(line) + "'");
    if (cols[2] == "mean") continue;
    report.add(std::string(cols[0]), parse_number<std::uint64_t>(cols[1], "seed"),
               parse_number<std::size_t>(cols[2], "sample_id"), std::string(cols[3]),
               parse_number<double>(cols[4], "value"));
  }
  return report;
}

std::string loss_csv(const std::vector<double>& trace) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out += std::to_string(i) + "," + num(trace[i]) + "\n";
  return out;
}

namespace {

std::string plot_script(const MetricReport& report, const std::string& name,
                        const std::vector<fs::path>& loss_files) {
  std::ostringstream os;
  os << "# gnuplot -p " << name << ".plot.gp\n";
  os << "set datafile separator ','\n";
  os << "set terminal pngcairo size 900,600\n";
  if (!loss_files.empty()) {
    os << "set output '" << name << "_loss.png'\n";
    os << "set logscale y\nset xlabel 'step'\nset ylabel 'loss'\n";
    os << "plot ";
    for (std::size_t i = 0; i < loss_files.size(); ++i) {
      if (i) os << ", \\\n     ";
      os << "'" << loss_files[i].filename().string() << "' using 1:2 skip 1 with lines title '"
         << loss_files[i].stem().string() << "'";
    }
    os << "\nunset logscale y\n";
  }
  // Mean semantic gap per omega_high arm.
  std::map<double, std::pair<double, std::size_t>> gaps;
  for (const auto& r : report.rows) {
    const std::string prefix = "omega_high=";
    if (r.metric != "semantic_gap" || r.experiment.rfind(prefix, 0) != 0) continue;
    auto& g = gaps[std::stod(r.experiment.substr(prefix.size()))];
    g.first += r.value;
    ++g.second;
  }
  if (!gaps.empty()) {
    os << "set datafile separator whitespace\n";
    os << "$gap << EOD\n";
    for (const auto& [omega, g] : gaps) os << num(omega) << " " << num(g.first / static_cast<double>(g.second)) << "\n";
    os << "EOD\n";
    os << "set output '" << name << "_cfg_gap.png'\n";
    os << "set xlabel 'omega_high'\nset ylabel 'mean semantic gap'\n";
    os << "plot $gap using 1:2 with linespoints title 'semantic gap'\n";
  }
  return os.str();
}

std::string summary_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["experiment"] = report.experiment;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["rows"] = report.rows.size();
  auto& aggs = j["aggregates"] = nlohmann::ordered_json::array();
  for (const auto& a : report.aggregates())
    aggs.push_back({{"experiment", a.experiment}, {"seed", a.seed}, {"metric", a.metric}, {"mean", a.mean},
                    {"count", a.count}});
  return j.dump(2) + "\n";
}

}  // namespace

std::vector<fs::path> metrics_emit(const MetricReport& report, const fs::path& out_dir, bool overwrite,
                                   const std::vector<fs::path>& loss_files) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IOError("cannot create " + out_dir.string() + ": " + ec.message());
  const std::string name = report.experiment.empty() ? "metrics" : report.experiment;
  const std::vector<fs::path> paths = {out_dir / (name + ".csv"), out_dir / (name + ".summary.json"),
                                       out_dir / (name + ".plot.gp")};
  write_file(paths[0], metrics_csv(report), overwrite);
  write_file(paths[1], summary_json(report), overwrite);
  write_file(paths[2], plot_script(report, name, loss_files), overwrite);
  return paths;
}

void RunManifest::add_input(const fs::path& path) { inputs.emplace_back(path.string(), file_sha256(path)); }
void RunManifest::add_output(const fs::path& path) { outputs.emplace_back(path.string(), file_sha256(path)); }

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["config"] = config_text;
  auto files = [](const auto& list) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& [path, hash] : list) arr.push_back({{"path", path}, {"sha256", hash}});
    return arr;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  j["wall_seconds"] = wall_seconds;
  return j.dump(2) + "\n";
}

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  std::vector<std::string> sets;
  bool overwrite = false;
};

// One command invocation: resolved config, output directory and manifest.
class Run {
 public:
  Run(std::string command, const CommonOptions& opts) : start_(std::chrono::steady_clock::now()) {
    ExperimentConfig c;
    if (!opts.config_path.empty()) c = parse_config(read_file(opts.config_path));
    apply_env_overrides(c);
    if (!opts.out_dir.empty()) c.out_dir = opts.out_dir;
    if (opts.seed >= 0) c.seed = static_cast<std::uint64_t>(opts.seed);
    for (const auto& kv : opts.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    raw_ = c;
    overwrite_ = opts.overwrite;
    manifest_.command = std::move(command);
  }

  ExperimentConfig& raw() { return raw_; }

  // Call after subcommand flags have been applied to raw().
  const ExperimentConfig& finalize() {
    raw_.validate();
    config_ = raw_.resolved();
    manifest_.config_text = render_config(raw_);
    manifest_.config_hash = config_hash(raw_);
    manifest_.seed = raw_.seed;
    out_ = config_.out_dir;
    return config_;
  }

  fs::path path(const std::string& name) const { return out_ / name; }

  fs::path write(const std::string& name, std::string_view bytes) {
    const fs::path p = path(name);
    write_file(p, bytes, overwrite_);
    manifest_.add_output(p);
    return p;
  }

  fs::path save(const std::string& name, const ParamStore& store) { return write(name, encode_checkpoint(store)); }

  void emit(const MetricReport& report) {
    std::vector<fs::path> losses;
    for (const char* f : {"pretrain_loss.csv", "adapter_loss.csv"})
      if (fs::exists(path(f))) losses.push_back(path(f));
    for (const auto& p : metrics_emit(report, out_, overwrite_, losses)) manifest_.add_output(p);
  }

  BackboneParams load_backbone(const std::string& arg) {
    const fs::path p = arg.empty() ? path("backbone.ckpt") : fs::path(arg);
    if (!fs::exists(p)) throw IOError("backbone checkpoint not found: " + p.string());
    manifest_.add_input(p);
    return backbone_from_store(config_.backbone, load_checkpoint(p, Role::kThetaFrozen), true);
  }

  AdapterParams load_adapter(const std::string& arg) {
    const fs::path p = arg.empty() ? path("adapter.ckpt") : fs::path(arg);
    if (!fs::exists(p)) throw IOError("adapter checkpoint not found: " + p.string());
    manifest_.add_input(p);
    return adapter_from_store(config_.backbone, load_checkpoint(p, Role::kPhi));
  }

  void finish(std::ostream& out) {
    manifest_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const fs::path p = path("manifest_" + manifest_.command + ".json");
    write_file(p, manifest_.to_json(), overwrite_);
    out << "wrote " << manifest_.outputs.size() << " files to " << out_.string() << " (manifest " << p.filename().string()
        << ")\n";
  }

 private:
  std::chrono::steady_clock::time_point start_;
  ExperimentConfig raw_;
  ExperimentConfig config_;
  RunManifest manifest_;
  fs::path out_;
  bool overwrite_ = false;
};

double tail_mean(const std::vector<double>& v, std::size_t n) {
  n = std::min(n, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return n ? s / static_cast<double>(n) : 0.0;
}

std::string latent_csv(const VideoLatent& v) {
  std::string out = "frame";
  for (std::size_t d = 0; d < v.dim(); ++d) out += ",d" + std::to_string(d);
  out += "\n";
  for (std::size_t f = 0; f < v.frames(); ++f) {
    out += std::to_string(f);
    for (double x : v.row(f)) out += "," + num(x);
    out += "\n";
  }
  return out;
}

ParamStore adapter_checkpoint(const AdapterTrainer& trainer) {
  return merge_stores(trainer.phi().store, trainer.optimizer().state());
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale PropFly pipeline on synthetic video latents", "propfly"};
  app.require_subcommand(1);
  app.fallthrough();
  CommonOptions common;
  app.add_option("--config", common.config_path, "Experiment config file (see `defaults`)");
  app.add_option("--out", common.out_dir, "Output directory (overrides out_dir)");
  app.add_option("--seed", common.seed, "Global seed (overrides seed)");
  app.add_option("--set", common.sets, "Override one config key: key=value")->take_all();
  app.add_flag("--overwrite", common.overwrite, "Replace existing output files");

  auto* defaults = app.add_subcommand("defaults", "Print the default config");

  auto* pre = app.add_subcommand("pretrain", "Pretrain and freeze the backbone");
  std::int64_t pre_steps = -1;
  bool toy = false;
  pre->add_option("--steps", pre_steps, "Pretraining steps");
  pre->add_flag("--toy", toy, "Gaussian toy data");

  auto* pairgen = app.add_subcommand("pairgen", "Generate on-the-fly pairs and gap statistics");
  std::string backbone_path, adapter_path;
  std::size_t pair_count = 64;
  pairgen->add_option("--backbone", backbone_path, "Backbone checkpoint (default <out>/backbone.ckpt)");
  pairgen->add_option("--count", pair_count, "Number of pairs")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train-adapter", "Train the adapter");
  std::int64_t train_steps = -1;
  std::string mode;
  std::size_t checkpoint_every = 0;
  train->add_option("--backbone", backbone_path, "Backbone checkpoint (default <out>/backbone.ckpt)");
  train->add_option("--steps", train_steps, "Training steps");
  train->add_option("--mode", mode, "gmfm, standard_fm, paired_dataset or gmfm_no_rspf");
  train->add_option("--checkpoint-every", checkpoint_every, "Write adapter_step<N>.ckpt every N steps");

  auto* prop = app.add_subcommand("propagate", "Propagate a first-frame style edit through a source video");
  int content = 0, from_style = -1, to_style = -1;
  std::uint64_t sample_seed = 0;
  prop->add_option("--backbone", backbone_path, "Backbone checkpoint");
  prop->add_option("--adapter", adapter_path, "Adapter checkpoint (default <out>/adapter.ckpt)");
  prop->add_option("--content", content, "Source content id");
  prop->add_option("--from-style", from_style, "Source style id (-1 for none)");
  prop->add_option("--to-style", to_style, "Target style id")->required();
  prop->add_option("--sample-seed", sample_seed, "Source sample seed");

  auto* eval = app.add_subcommand("eval", "Score held-out edit propagation");
  eval->add_option("--backbone", backbone_path, "Backbone checkpoint");
  eval->add_option("--adapter", adapter_path, "Adapter checkpoint");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation suite");
  std::string suite;
  ablate->add_option("--suite", suite, "cfg_sweep, fullsampling_vs_onestep, fm_vs_gmfm or rspf")->required();
  ablate->add_option("--backbone", backbone_path, "Backbone checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "propfly: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (defaults->parsed()) {
      ExperimentConfig c;
      apply_env_overrides(c);
      out << render_config(c);
      return 0;
    }

    if (pre->parsed()) {
      Run run("pretrain", common);
      if (pre_steps >= 0) run.raw().pretrain.steps = static_cast<std::size_t>(pre_steps);
      if (toy) run.raw().synth.gaussian_toy = true;
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const PretrainResult r = pretrain(cfg.backbone, world, cfg.pretrain);
      run.save("backbone.ckpt", r.params.store);
      run.write("pretrain_loss.csv", loss_csv(r.loss_trace));
      out << "pretrain: " << r.loss_trace.size() << " steps, trailing mean loss " << tail_mean(r.loss_trace, 100)
          << ", cfg margin " << r.cfg_margin << "\n";
      run.finish(out);
      return 0;
    }

    if (pairgen->parsed()) {
      Run run("pairgen", common);
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const BackboneParams theta = run.load_backbone(backbone_path);
      CounterRng rng(cfg.seed, Purpose::kDataset, 0xa11);
      CounterRng fuse(cfg.seed, Purpose::kRspf, 0xa11);
      const auto pool = training_styles(cfg.synth.n_styles, cfg.train.held_out_styles);
      const auto batch = world.sample_batch(rng, pair_count, cfg.train.data_style_prob, pool);
      std::vector<std::shared_ptr<const VideoLatent>> x_t;
      std::vector<double> ts;
      std::vector<ConditionCode> codes;
      for (const auto& s : batch) {
        const double t = rng.uniform(cfg.train.t_min, cfg.train.t_max);
        VideoLatent x1(s.video.frames(), s.video.dim());
        for (double& v : x1.data()) v = rng.normal();
        x_t.push_back(std::make_shared<const VideoLatent>(interp_noise(s.video, x1, t)));
        ts.push_back(t);
        codes.push_back(fuse.bernoulli(cfg.train.fusion_prob()) ? rspf_fuse(s.code, pool[fuse.below(pool.size())])
                                                                : s.code);
      }
      const auto pairs = gen_pairs(theta, x_t, ts, codes, cfg.train.guidance);
      ParamStore dump;
      nlohmann::ordered_json meta = nlohmann::ordered_json::array();
      MetricReport report;
      report.experiment = "pairgen";
      report.config_hash = config_hash(run.raw());
      report.seed = cfg.seed;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        const std::string prefix = "pair" + std::to_string(i) + ".";
        dump.add(prefix + "x_t", p.x_t->to_tensor(), Role::kThetaFrozen);
        dump.add(prefix + "x_low", p.x_low.to_tensor(), Role::kThetaFrozen);
        dump.add(prefix + "x_high", p.x_high.to_tensor(), Role::kThetaFrozen);
        dump.add(prefix + "v_high", p.v_high.to_tensor(), Role::kThetaFrozen);
        meta.push_back({{"index", i},
                        {"t", p.t},
                        {"omega_low", p.omega_low},
                        {"omega_high", p.omega_high},
                        {"content_id", p.c_aug.content_id},
                        {"style_id", p.c_aug.style_id ? nlohmann::ordered_json(*p.c_aug.style_id) : nullptr}});
        report.add("pairgen", cfg.seed, i, "semantic_gap", semantic_gap(p));
        report.add("pairgen", cfg.seed, i, "pair_motion_alignment", motion_alignment(p.x_low, p.x_high).value);
      }
      run.save("pairs.ckpt", dump);
      run.write("pairs.meta.json", meta.dump(2) + "\n");
      run.emit(report);
      const auto gaps = report.values("pairgen", "semantic_gap");
      out << "pairgen: " << pairs.size() << " pairs, mean semantic gap " << report.mean("pairgen", "semantic_gap")
          << " (min " << *std::min_element(gaps.begin(), gaps.end()) << ", max "
          << *std::max_element(gaps.begin(), gaps.end()) << ")\n";
      run.finish(out);
      return 0;
    }

    if (train->parsed()) {
      Run run("train-adapter", common);
      if (train_steps >= 0) run.raw().train.steps = static_cast<std::size_t>(train_steps);
      if (!mode.empty()) run.raw().train.mode = parse_mode(mode);
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const BackboneParams theta = run.load_backbone(backbone_path);
      AdapterTrainer trainer(theta, world, cfg.train, init_adapter(cfg.backbone, cfg.train.seed));
      std::vector<double> trace;
      trace.reserve(cfg.train.steps);
      for (std::size_t s = 0; s < cfg.train.steps; ++s) {
        trace.push_back(trainer.step().loss);
        if (checkpoint_every && (s + 1) % checkpoint_every == 0 && s + 1 < cfg.train.steps)
          run.save("adapter_step" + std::to_string(s + 1) + ".ckpt", adapter_checkpoint(trainer));
      }
      run.save("adapter.ckpt", adapter_checkpoint(trainer));
      run.write("adapter_loss.csv", loss_csv(trace));
      out << "train-adapter (" << mode_name(cfg.train.mode) << "): " << trace.size()
          << " steps, trailing mean loss " << tail_mean(trace, 100) << "\n";
      run.finish(out);
      return 0;
    }

    if (prop->parsed()) {
      Run run("propagate", common);
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const BackboneParams theta = run.load_backbone(backbone_path);
      const AdapterParams phi = run.load_adapter(adapter_path);
      EditCase edit;
      if (from_style >= 0) edit.from_style = from_style;
      edit.to_style = to_style;
      world.check_code(ConditionCode::make(content, to_style));
      edit.source = world.gen_sample(sample_seed, content, edit.from_style).video;
      edit.target = world.oracle_edit(edit.source, edit.from_style, edit.to_style);
      edit.caption = cfg.eval.caption == EvalCaption::kTarget ? ConditionCode::make(content, to_style)
                                                              : ConditionCode::make(content, edit.from_style);
      const VideoLatent result =
          propagate(theta, phi, edit, cfg.eval.sampler, CounterRng(cfg.seed, Purpose::kNoise, sample_seed));
      MetricReport report;
      report.experiment = "propagate";
      report.config_hash = config_hash(run.raw());
      report.seed = cfg.seed;
      report.add("propagate", cfg.seed, 0, "style_alignment", style_alignment(result, edit.target));
      report.add("propagate", cfg.seed, 0, "source_style_alignment", style_alignment(edit.source, edit.target));
      report.add("propagate", cfg.seed, 0, "motion_alignment", motion_alignment(result, edit.source).value);
      run.write("propagated.csv", latent_csv(result));
      run.emit(report);
      out << "propagate: style_alignment " << report.mean("propagate", "style_alignment") << " (source "
          << report.mean("propagate", "source_style_alignment") << ")\n";
      run.finish(out);
      return 0;
    }

    if (eval->parsed()) {
      Run run("eval", common);
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const BackboneParams theta = run.load_backbone(backbone_path);
      const AdapterParams phi = run.load_adapter(adapter_path);
      const PropagationScores s = evaluate_propagation(theta, phi, world, cfg.eval, cfg.train.held_out_styles);
      MetricReport report;
      report.experiment = "eval";
      report.config_hash = config_hash(run.raw());
      report.seed = cfg.seed;
      for (std::size_t i = 0; i < s.propagated.size(); ++i) {
        report.add("eval", cfg.seed, i, "style_alignment", s.propagated[i]);
        report.add("eval", cfg.seed, i, "source_style_alignment", s.source[i]);
        report.add("eval", cfg.seed, i, "motion_alignment", s.motion[i]);
      }
      run.emit(report);
      out << "eval: style_alignment " << report.mean("eval", "style_alignment") << " vs source "
          << report.mean("eval", "source_style_alignment") << ", win rate " << s.win_rate() << "\n";
      run.finish(out);
      return 0;
    }

    if (ablate->parsed()) {
      Run run("ablate", common);
      const Suite which = parse_suite(suite);
      const auto& cfg = run.finalize();
      const SynthWorld world(cfg.synth);
      const BackboneParams theta = run.load_backbone(backbone_path);
      AblationInputs in;
      in.theta = &theta;
      in.world = &world;
      in.train = cfg.train;
      in.eval = cfg.eval;
      in.config_hash = config_hash(run.raw());
      const MetricReport report = run_ablation(which, in, cfg.seed);
      run.emit(report);
      for (const auto& a : report.aggregates())
        out << a.experiment << " " << a.metric << " = " << a.mean << " (n=" << a.count << ")\n";
      run.finish(out);
      return 0;
    }
  } catch (const Error& e) {
    err << "propfly: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "propfly: unexpected failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("propfly");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace propfly
