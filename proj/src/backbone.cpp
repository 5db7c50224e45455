#include "propfly/backbone.hpp"

#include <cmath>
#include <numbers>

#include "propfly/errors.hpp"

namespace propfly {

namespace {

std::string block_name(std::size_t k, const char* part) { return "block" + std::to_string(k) + "." + part; }

ad::Tensor normal_tensor(CounterRng& rng, ad::Shape shape, double stddev) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = stddev * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

ad::Tensor identity(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return ad::Tensor::from({n, n}, std::move(v), true);
}

ad::Tensor one_hot(std::size_t n, std::size_t index) {
  std::vector<double> v(n, 0.0);
  v[index] = 1.0;
  return ad::Tensor::from({1, n}, std::move(v));
}

ad::Tensor ones_column(std::size_t rows) { return ad::Tensor::filled({rows, 1}, 1.0); }

// x @ w + 1 b
ad::Tensor affine(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b, const ad::Tensor& ones) {
  return ad::add(ad::matmul(x, w), ad::matmul(ones, b));
}

}  // namespace

void BackboneConfig::validate() const {
  if (n_blocks == 0 || s_in == 0) throw ConfigError("n_blocks and s_in must be positive");
  if (n_blocks % s_in != 0)
    throw ConfigError("n_blocks (" + std::to_string(n_blocks) + ") not divisible by s_in (" +
                      std::to_string(s_in) + ")");
  if (width < dim) throw ConfigError("width must be >= latent dim");
  if (frames == 0 || dim == 0 || time_embed_dim == 0 || cond_embed_dim == 0 || fourier_pairs == 0)
    throw ConfigError("backbone extents must be positive");
  if (n_content < 1 || n_styles < 1) throw ConfigError("backbone needs at least one content and style id");
}

void BackboneParams::freeze() {
  for (const auto& e : store) {
    ad::Tensor t = e.tensor;
    t.set_requires_grad(false);
    t.zero_grad();
  }
  frozen = true;
}

BackboneParams init_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  BackboneParams p;
  p.config = config;
  CounterRng rng(seed, Purpose::kInitBackbone);
  const auto D = config.dim, W = config.width, E = config.time_embed_dim, F = config.frames;
  const auto Ec = config.cond_embed_dim;
  const auto fin = 2 * config.fourier_pairs;
  auto inv = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  const Role r = Role::kThetaFrozen;

  p.store.add("in.w", normal_tensor(rng, {D, W}, inv(D)), r);
  p.store.add("in.b", ad::Tensor::zeros({1, W}, true), r);
  p.store.add("time.w", normal_tensor(rng, {fin, E}, inv(fin)), r);
  p.store.add("time.b", ad::Tensor::zeros({1, E}, true), r);
  p.store.add("emb.content", normal_tensor(rng, {static_cast<std::size_t>(config.n_content), Ec}, 1.0), r);
  p.store.add("emb.style", normal_tensor(rng, {static_cast<std::size_t>(config.n_styles), Ec}, 1.0), r);
  p.store.add("emb.null", normal_tensor(rng, {1, Ec}, 1.0), r);
  p.store.add("embed.t", normal_tensor(rng, {E, W}, inv(E + Ec)), r);
  p.store.add("embed.c", normal_tensor(rng, {Ec, W}, inv(E + Ec)), r);
  p.store.add("embed.b", ad::Tensor::zeros({1, W}, true), r);
  p.store.add("embed2.w", normal_tensor(rng, {W, W}, inv(W)), r);
  p.store.add("embed2.b", ad::Tensor::zeros({1, W}, true), r);
  for (std::size_t k = 0; k < config.n_blocks; ++k) {
    p.store.add(block_name(k, "proj"), normal_tensor(rng, {W, W}, inv(W)), r);
    p.store.add(block_name(k, "fc1.w"), normal_tensor(rng, {W, W}, inv(W)), r);
    p.store.add(block_name(k, "fc1.b"), ad::Tensor::zeros({1, W}, true), r);
    p.store.add(block_name(k, "fc2.w"), normal_tensor(rng, {W, W}, inv(W)), r);
    p.store.add(block_name(k, "fc2.b"), ad::Tensor::zeros({1, W}, true), r);
    p.store.add(block_name(k, "mix"), identity(F), r);
  }
  p.store.add("out.w", normal_tensor(rng, {W, D}, inv(W)), r);
  p.store.add("out.b", ad::Tensor::zeros({1, D}, true), r);
  return p;
}

BackboneParams backbone_from_store(const BackboneConfig& config, const ParamStore& store, bool frozen) {
  BackboneParams reference = init_backbone(config, 0);
  BackboneParams p;
  p.config = config;
  for (const auto& e : reference.store) {
    const auto& src = store.entry(e.name);
    if (src.tensor.shape() != e.tensor.shape())
      throw ShapeError("backbone tensor '" + e.name + "' has shape " + ad::shape_string(src.tensor.shape()) +
                       ", expected " + ad::shape_string(e.tensor.shape()));
    p.store.add(e.name, src.tensor.clone(true), Role::kThetaFrozen);
  }
  if (frozen) p.freeze();
  return p;
}

VideoLatent interp_noise(const VideoLatent& x0, const VideoLatent& x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw RangeError("interp_noise: t=" + std::to_string(t) + " outside [0, 1]");
  if (x0.frames() != x1.frames() || x0.dim() != x1.dim()) throw ShapeError("interp_noise: shape mismatch");
  VideoLatent out(x0.frames(), x0.dim());
  auto o = out.data();
  const auto a = x0.data();
  const auto b = x1.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

std::vector<double> fourier_features(double t, std::size_t pairs) {
  std::vector<double> f(2 * pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const double w = std::numbers::pi * static_cast<double>(k + 1) * 0.5;
    f[2 * k] = std::sin(w * t);
    f[2 * k + 1] = std::cos(w * t);
  }
  return f;
}

namespace {
ad::Tensor condition_embedding(const BackboneParams& params, const ConditionCode& c) {
  const auto& cfg = params.config;
  if (c.is_null) return params["emb.null"];
  if (c.content_id < 0 || c.content_id >= cfg.n_content)
    throw IdError("content id " + std::to_string(c.content_id) + " out of range");
  ad::Tensor e = ad::matmul(
      one_hot(static_cast<std::size_t>(cfg.n_content), static_cast<std::size_t>(c.content_id)), params["emb.content"]);
  if (c.style_id) {
    if (*c.style_id < 0 || *c.style_id >= cfg.n_styles)
      throw IdError("style id " + std::to_string(*c.style_id) + " out of range");
    e = ad::add(e, ad::matmul(one_hot(static_cast<std::size_t>(cfg.n_styles), static_cast<std::size_t>(*c.style_id)),
                              params["emb.style"]));
  }
  return e;
}
}  // namespace

ad::Tensor backbone_embedding(const BackboneParams& params, double t, const ConditionCode& c) {
  const auto& cfg = params.config;
  const ad::Tensor feats = ad::Tensor::from({1, 2 * cfg.fourier_pairs}, fourier_features(t, cfg.fourier_pairs));
  const ad::Tensor one = ad::Tensor::filled({1, 1}, 1.0);
  const ad::Tensor time = ad::gelu(affine(feats, params["time.w"], params["time.b"], one));
  const ad::Tensor cond = condition_embedding(params, c);
  const ad::Tensor hidden = ad::gelu(ad::add(
      ad::add(ad::matmul(time, params["embed.t"]), ad::matmul(cond, params["embed.c"])), params["embed.b"]));
  return ad::gelu(affine(hidden, params["embed2.w"], params["embed2.b"], one));
}

ad::Tensor backbone_forward(const BackboneParams& params, const ad::Tensor& x_t, const ad::Tensor& embedding,
                            std::span<const ad::Tensor> injections, std::vector<ad::Tensor>* trace) {
  const auto& cfg = params.config;
  if (x_t.rank() != 2 || x_t.cols() != cfg.dim)
    throw ShapeError("backbone: latent shape " + ad::shape_string(x_t.shape()) + " does not have " +
                     std::to_string(cfg.dim) + " columns");
  if (x_t.rows() != cfg.frames)
    throw ShapeError("backbone: expected " + std::to_string(cfg.frames) + " frames, got " +
                     std::to_string(x_t.rows()));
  if (!injections.empty() && injections.size() != cfg.adapter_blocks())
    throw ConfigError("backbone: " + std::to_string(injections.size()) + " injections for " +
                      std::to_string(cfg.adapter_blocks()) + " injection points");

  const ad::Tensor ones = ones_column(cfg.frames);
  ad::Tensor h = affine(x_t, params["in.w"], params["in.b"], ones);
  for (std::size_t k = 0; k < cfg.n_blocks; ++k) {
    const ad::Tensor cond = ad::matmul(ones, ad::matmul(embedding, params[block_name(k, "proj")]));
    const ad::Tensor z = ad::add(h, cond);
    const ad::Tensor a = ad::gelu(affine(z, params[block_name(k, "fc1.w")], params[block_name(k, "fc1.b")], ones));
    const ad::Tensor u = affine(a, params[block_name(k, "fc2.w")], params[block_name(k, "fc2.b")], ones);
    h = ad::matmul(params[block_name(k, "mix")], ad::add(h, u));
    if (!injections.empty() && (k + 1) % cfg.s_in == 0) h = ad::add(h, injections[(k + 1) / cfg.s_in - 1]);
    if (trace) trace->push_back(h);
  }
  return affine(h, params["out.w"], params["out.b"], ones);
}

ad::Tensor velocity_graph(const BackboneParams& params, const ad::Tensor& x_t, double t, const ConditionCode& c) {
  return backbone_forward(params, x_t, backbone_embedding(params, t, c));
}

VideoLatent velocity(const BackboneParams& params, const VideoLatent& x_t, double t, const ConditionCode& c) {
  ad::NoGradGuard no_grad;
  return VideoLatent::from_tensor(velocity_graph(params, x_t.to_tensor(), t, c));
}

std::vector<FmDraw> draw_fm(std::span<const Sample> batch, CounterRng& rng, double p_drop) {
  std::vector<FmDraw> draws;
  draws.reserve(batch.size());
  for (const auto& s : batch) {
    FmDraw d;
    d.t = rng.uniform();
    d.x1 = VideoLatent(s.video.frames(), s.video.dim());
    for (double& v : d.x1.data()) v = rng.normal();
    d.dropped = rng.bernoulli(p_drop);
    draws.push_back(std::move(d));
  }
  return draws;
}

ad::Tensor fm_loss(const VelocityGraphFn& velocity_fn, std::span<const Sample> batch, std::span<const FmDraw> draws) {
  if (batch.empty()) throw ContractError("fm_loss: empty batch");
  if (draws.size() != batch.size()) throw ContractError("fm_loss: draw count does not match batch");
  ad::Tensor total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    const auto& d = draws[i];
    const VideoLatent x_t = interp_noise(s.video, d.x1, d.t);
    const ad::Tensor target = (d.x1 - s.video).to_tensor();
    const ConditionCode c = d.dropped ? ConditionCode::null() : s.code;
    const ad::Tensor item = ad::mse(velocity_fn(x_t.to_tensor(), d.t, c, i), target);
    total = total.defined() ? ad::add(total, item) : item;
  }
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

ad::Tensor fm_loss(const BackboneParams& params, std::span<const Sample> batch, CounterRng& rng, double p_drop) {
  const auto draws = draw_fm(batch, rng, p_drop);
  return fm_loss([&](const ad::Tensor& x_t, double t, const ConditionCode& c,
                     std::size_t) { return velocity_graph(params, x_t, t, c); },
                 batch, draws);
}

PretrainResult pretrain(const BackboneConfig& config, const SynthWorld& world, const PretrainConfig& pcfg) {
  if (pcfg.steps < 1) throw ContractError("pretrain: steps must be >= 1");
  if (pcfg.batch_size < 1) throw ContractError("pretrain: batch_size must be >= 1");
  if (world.config().frames != config.frames || world.config().dim != config.dim)
    throw ConfigError("pretrain: backbone and data latent shapes differ");

  PretrainResult result{init_backbone(config, pcfg.seed), {}};
  AdamW opt(result.params.store, pcfg.optimizer);
  ad::Tape tape;
  ad::TapeScope scope(tape);
  result.loss_trace.reserve(pcfg.steps);
  for (std::size_t step = 0; step < pcfg.steps; ++step) {
    CounterRng data_rng(pcfg.seed, Purpose::kDataset, step);
    CounterRng noise_rng(pcfg.seed, Purpose::kNoise, step);
    const auto batch = world.sample_batch(data_rng, pcfg.batch_size, pcfg.data_style_prob);
    const ad::Tensor loss = fm_loss(result.params, batch, noise_rng, pcfg.p_drop);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NumericsError("pretrain: non-finite loss at step " + std::to_string(step));
    ad::backward(loss);
    opt.step();
    result.loss_trace.push_back(value);
  }
  result.params.freeze();
  result.cfg_margin = cfg_informativeness(result.params, world, pcfg.seed);
  if (!(result.cfg_margin >= kMinCfgMargin))
    throw NumericsError("pretrain: conditional and unconditional velocities barely differ (margin " +
                        std::to_string(result.cfg_margin) + ")");
  return result;
}

double cfg_informativeness(const BackboneParams& params, const SynthWorld& world, std::uint64_t seed,
                           std::size_t draws) {
  CounterRng rng(seed, Purpose::kEval, 0x1cf9);
  double acc = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const int content = static_cast<int>(rng.below(static_cast<std::uint64_t>(world.config().n_content)));
    const int style = static_cast<int>(rng.below(static_cast<std::uint64_t>(world.config().n_styles)));
    const auto code = ConditionCode::make(content, style);
    const Sample s = world.config().gaussian_toy ? world.gen_toy_sample(rng.next_u64(), code)
                                                 : world.gen_sample(rng.next_u64(), content, style);
    VideoLatent x1(s.video.frames(), s.video.dim());
    for (double& v : x1.data()) v = rng.normal();
    const double t = rng.uniform(0.02, 0.98);
    const VideoLatent x_t = interp_noise(s.video, x1, t);
    acc += (velocity(params, x_t, t, code) - velocity(params, x_t, t, ConditionCode::null())).norm();
  }
  return acc / static_cast<double>(draws);
}

}  // namespace propfly
