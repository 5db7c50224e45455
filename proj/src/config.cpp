#include "propfly/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <set>
#include <sstream>

#include "propfly/checkpoint.hpp"
#include "propfly/errors.hpp"

namespace propfly {

namespace {

std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}

void parse_value(std::string_view text, double& out) {
  const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
    throw ConfigError("expected a number, got '" + std::string(text) + "'");
}
void parse_value(std::string_view text, bool& out) {
  if (text == "true") out = true;
  else if (text == "false") out = false;
  else throw ConfigError("expected true or false, got '" + std::string(text) + "'");
}
void parse_value(std::string_view text, std::string& out) { out = std::string(text); }
template <typename T>
  requires std::is_integral_v<T>
void parse_value(std::string_view text, T& out) {
  const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
    throw ConfigError("expected an integer, got '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename Access>
Field plain(std::string key, Access access) {
  return {std::move(key),
          [access](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return format_value(access(copy));
          },
          [access](ExperimentConfig& c, std::string_view v) { parse_value(v, access(c)); }};
}

template <typename Access, typename Name, typename Parse>
Field named(std::string key, Access access, Name name, Parse parse) {
  return {std::move(key),
          [access, name](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return std::string(name(access(copy)));
          },
          [access, parse](ExperimentConfig& c, std::string_view v) { access(c) = parse(v); }};
}

std::string_view method_name(SamplerMethod m) { return m == SamplerMethod::kEuler ? "euler" : "heun"; }
SamplerMethod parse_method(std::string_view v) {
  if (v == "euler") return SamplerMethod::kEuler;
  if (v == "heun") return SamplerMethod::kHeun;
  throw ConfigError("unknown sampler method '" + std::string(v) + "'");
}

#define PF_FIELD(key, expr) plain(key, [](ExperimentConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      PF_FIELD("seed", c.seed),
      PF_FIELD("out_dir", c.out_dir),
      PF_FIELD("synth.frames", c.synth.frames),
      PF_FIELD("synth.dim", c.synth.dim),
      PF_FIELD("synth.n_content", c.synth.n_content),
      PF_FIELD("synth.n_styles", c.synth.n_styles),
      PF_FIELD("synth.appearance_noise", c.synth.appearance_noise),
      PF_FIELD("synth.style_norm", c.synth.style_norm),
      PF_FIELD("synth.world_seed", c.synth.world_seed),
      PF_FIELD("synth.gaussian_toy", c.synth.gaussian_toy),
      PF_FIELD("synth.toy_sigma0", c.synth.toy_sigma0),
      PF_FIELD("backbone.n_blocks", c.backbone.n_blocks),
      PF_FIELD("backbone.width", c.backbone.width),
      PF_FIELD("backbone.time_embed_dim", c.backbone.time_embed_dim),
      PF_FIELD("backbone.cond_embed_dim", c.backbone.cond_embed_dim),
      PF_FIELD("backbone.fourier_pairs", c.backbone.fourier_pairs),
      PF_FIELD("backbone.s_in", c.backbone.s_in),
      PF_FIELD("pretrain.steps", c.pretrain.steps),
      PF_FIELD("pretrain.batch_size", c.pretrain.batch_size),
      PF_FIELD("pretrain.p_drop", c.pretrain.p_drop),
      PF_FIELD("pretrain.data_style_prob", c.pretrain.data_style_prob),
      PF_FIELD("pretrain.lr", c.pretrain.optimizer.lr),
      PF_FIELD("pretrain.beta1", c.pretrain.optimizer.beta1),
      PF_FIELD("pretrain.beta2", c.pretrain.optimizer.beta2),
      PF_FIELD("pretrain.eps", c.pretrain.optimizer.eps),
      PF_FIELD("pretrain.weight_decay", c.pretrain.optimizer.weight_decay),
      PF_FIELD("train.steps", c.train.steps),
      PF_FIELD("train.batch_size", c.train.batch_size),
      PF_FIELD("train.lr", c.train.lr),
      PF_FIELD("train.weight_decay", c.train.weight_decay),
      PF_FIELD("train.style_fusion_prob", c.train.style_fusion_prob),
      PF_FIELD("train.omega_low", c.train.guidance.omega_low),
      PF_FIELD("train.omega_high", c.train.guidance.omega_high),
      PF_FIELD("train.t_min", c.train.t_min),
      PF_FIELD("train.t_max", c.train.t_max),
      named("train.mode", [](ExperimentConfig& c) -> auto& { return c.train.mode; }, mode_name, parse_mode),
      PF_FIELD("train.data_style_prob", c.train.data_style_prob),
      PF_FIELD("train.held_out_styles", c.train.held_out_styles),
      named("train.pair_source", [](ExperimentConfig& c) -> auto& { return c.train.pair_source; },
            pair_source_name, parse_pair_source),
      PF_FIELD("train.full_sampling_steps", c.train.full_sampling_steps),
      PF_FIELD("eval.n_samples", c.eval.n_samples),
      PF_FIELD("eval.sampler_steps", c.eval.sampler.n_steps),
      named("eval.sampler_method", [](ExperimentConfig& c) -> auto& { return c.eval.sampler.method; }, method_name,
            parse_method),
      PF_FIELD("eval.sampler_omega", c.eval.sampler.omega),
      named("eval.caption", [](ExperimentConfig& c) -> auto& { return c.eval.caption; }, eval_caption_name,
            parse_eval_caption),
      PF_FIELD("eval.pair_trials", c.eval.pair_trials),
      PF_FIELD("eval.seed", c.eval.seed),
  };
  return table;
}

#undef PF_FIELD

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  c.backbone.frames = c.synth.frames;
  c.backbone.dim = c.synth.dim;
  c.backbone.n_content = c.synth.n_content;
  c.backbone.n_styles = c.synth.n_styles;
  c.pretrain.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

void ExperimentConfig::validate() const {
  const ExperimentConfig c = resolved();
  if (c.synth.frames < 3) throw ConfigError("synth.frames must be >= 3");
  if (c.synth.dim <= kMotionDims) throw ConfigError("synth.dim must exceed the motion dims");
  if (c.synth.n_content < 1 || c.synth.n_styles < 1) throw ConfigError("synth needs contents and styles");
  c.backbone.validate();
  if (c.pretrain.steps < 1 || c.pretrain.batch_size < 1) throw ConfigError("pretrain steps and batch must be >= 1");
  if (!(c.pretrain.p_drop >= 0.0 && c.pretrain.p_drop <= 1.0)) throw ConfigError("pretrain.p_drop outside [0, 1]");
  c.train.validate(c.synth.n_styles);
  c.eval.validate();
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

std::string render_config(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
    if (s != section) {
      os << "\n# " << s << "\n";
      section = s;
    }
    os << f.key << " = " << f.get(config) << "\n";
  }
  return os.str();
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second)
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + std::string(key) + "' repeated");
    try {
      find_field(key).set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  find_field(trim(key)).set(config, trim(value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(render_config(config)); }

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* dir = std::getenv("PROPFLY_OUT_DIR"); dir && *dir) config.out_dir = dir;
  if (const char* seed = std::getenv("PROPFLY_SEED"); seed && *seed) {
    try {
      set_config_value(config, "seed", seed);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("PROPFLY_SEED: ") + e.what());
    }
  }
}

}  // namespace propfly
