#include "propfly/synthvid.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "propfly/errors.hpp"

namespace propfly {

double quantize(double x) { return std::ldexp(std::nearbyint(std::ldexp(x, 32)), -32); }

// ---- VideoLatent ----------------------------------------------------------

VideoLatent::VideoLatent(std::size_t frames, std::size_t dim, double fill)
    : frames_(frames), dim_(dim), values_(frames * dim, fill) {}

VideoLatent::VideoLatent(std::size_t frames, std::size_t dim, std::vector<double> values)
    : frames_(frames), dim_(dim), values_(std::move(values)) {
  if (values_.size() != frames * dim)
    throw ShapeError("VideoLatent " + std::to_string(frames) + "x" + std::to_string(dim) + " given " +
                     std::to_string(values_.size()) + " values");
}

VideoLatent VideoLatent::from_tensor(const ad::Tensor& t) {
  if (t.rank() != 2) throw ShapeError("VideoLatent from tensor of shape " + ad::shape_string(t.shape()));
  return VideoLatent(t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end()));
}

ad::Tensor VideoLatent::to_tensor(bool requires_grad) const {
  return ad::Tensor::from({frames_, dim_}, values_, requires_grad);
}

void VideoLatent::check_same_shape(const VideoLatent& o, const char* what) const {
  if (frames_ != o.frames_ || dim_ != o.dim_)
    throw ShapeError(std::string(what) + ": latent shapes " + std::to_string(frames_) + "x" +
                     std::to_string(dim_) + " and " + std::to_string(o.frames_) + "x" +
                     std::to_string(o.dim_));
}

VideoLatent& VideoLatent::operator+=(const VideoLatent& o) {
  check_same_shape(o, "add");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}

VideoLatent& VideoLatent::operator-=(const VideoLatent& o) {
  check_same_shape(o, "sub");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}

VideoLatent& VideoLatent::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

double VideoLatent::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

double VideoLatent::norm() const { return std::sqrt(squared_norm()); }

bool VideoLatent::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string ConditionCode::str() const {
  if (is_null) return "null";
  std::ostringstream os;
  os << "content=" << content_id << ",style=";
  if (style_id)
    os << *style_id;
  else
    os << "none";
  return os.str();
}

// ---- StyleLibrary ---------------------------------------------------------

StyleLibrary::StyleLibrary(std::uint64_t seed, int count, std::size_t dims, double norm) : dims_(dims) {
  if (count < 1) throw ConfigError("style library needs at least one style");
  embeddings_.reserve(count);
  for (int s = 0; s < count; ++s) {
    CounterRng rng(seed, Purpose::kStyleLibrary, static_cast<std::uint64_t>(s));
    std::vector<double> e(dims);
    double sq = 0.0;
    for (double& v : e) {
      v = rng.normal();
      sq += v * v;
    }
    const double factor = norm / std::sqrt(sq);
    for (double& v : e) v = quantize(v * factor);
    embeddings_.push_back(std::move(e));
  }
}

std::span<const double> StyleLibrary::embedding(int style) const {
  if (style < 0 || style >= size())
    throw IdError("style id " + std::to_string(style) + " outside [0, " + std::to_string(size()) + ")");
  return embeddings_[static_cast<std::size_t>(style)];
}

double StyleLibrary::min_pairwise_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < embeddings_.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings_.size(); ++j) {
      double sq = 0.0;
      for (std::size_t d = 0; d < dims_; ++d) {
        const double diff = embeddings_[i][d] - embeddings_[j][d];
        sq += diff * diff;
      }
      best = std::min(best, std::sqrt(sq));
    }
  return best;
}

// ---- SynthWorld -----------------------------------------------------------

SynthWorld::SynthWorld(SynthConfig config)
    : config_(config),
      styles_(config.world_seed, config.n_styles, config.appearance_dim(), config.style_norm) {
  if (config_.dim <= kMotionDims) throw ConfigError("latent dim must exceed the motion dims");
  if (config_.frames < 1 || config_.n_content < 1) throw ConfigError("frames and n_content must be positive");
  for (int c = 0; c < config_.n_content; ++c) {
    CounterRng rng(config_.world_seed, Purpose::kContentBase, static_cast<std::uint64_t>(c));
    std::vector<double> base(config_.appearance_dim());
    for (double& v : base) v = quantize(rng.uniform(-1.0, 1.0));
    bases_.push_back(std::move(base));
    CounterRng mrng(config_.world_seed, Purpose::kContentMotion, static_cast<std::uint64_t>(c));
    std::vector<double> motion(kMotionDims);
    for (double& v : motion) v = quantize(mrng.uniform(-1.0, 1.0));
    toy_motion_.push_back(std::move(motion));
  }
}

void SynthWorld::check_code(const ConditionCode& code) const {
  if (code.is_null) return;
  if (code.content_id < 0 || code.content_id >= config_.n_content)
    throw IdError("content id " + std::to_string(code.content_id) + " outside [0, " +
                  std::to_string(config_.n_content) + ")");
  if (code.style_id && (*code.style_id < 0 || *code.style_id >= config_.n_styles))
    throw IdError("style id " + std::to_string(*code.style_id) + " outside [0, " +
                  std::to_string(config_.n_styles) + ")");
}

std::span<const double> SynthWorld::content_base(int content) const {
  check_code(ConditionCode::make(content));
  return bases_[static_cast<std::size_t>(content)];
}

Sample SynthWorld::gen_sample(std::uint64_t seed, int content, std::optional<int> style) const {
  const auto code = ConditionCode::make(content, style);
  check_code(code);
  const std::size_t frames = config_.frames;
  const std::size_t dim = config_.dim;
  VideoLatent video(frames, dim);

  CounterRng motion_rng = CounterRng(seed, Purpose::kContentMotion, static_cast<std::uint64_t>(content));
  for (std::size_t axis = 0; axis < kMotionDims; ++axis) {
    const double a = motion_rng.uniform(-1.0, 1.0);
    const double b = motion_rng.uniform(-0.5, 0.5);
    const double psi = motion_rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t f = 0; f < frames; ++f) {
      const double phase = static_cast<double>(f) / static_cast<double>(frames);
      video(f, axis) = quantize(a + b * phase + 0.5 * std::sin(2.0 * std::numbers::pi * phase + psi));
    }
  }

  const auto& base = bases_[static_cast<std::size_t>(content)];
  const std::span<const double> emb =
      style ? styles_.embedding(*style) : std::span<const double>{};
  CounterRng noise_rng(seed, Purpose::kAppearanceNoise, static_cast<std::uint64_t>(content));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t d = 0; d < config_.appearance_dim(); ++d) {
      const double noise = quantize(config_.appearance_noise * noise_rng.normal());
      // base + noise first so that the styled and unstyled variants differ by
      // exactly the (grid-aligned) embedding.
      double v = base[d] + noise;
      if (!emb.empty()) v += emb[d];
      video(f, kMotionDims + d) = v;
    }
  }
  return {std::move(video), code};
}

std::vector<double> SynthWorld::toy_mean(const ConditionCode& code) const {
  if (code.is_null) throw ContractError("toy mean is undefined for the null condition");
  check_code(code);
  std::vector<double> mu(config_.dim);
  const auto& motion = toy_motion_[static_cast<std::size_t>(code.content_id)];
  const auto& base = bases_[static_cast<std::size_t>(code.content_id)];
  for (std::size_t d = 0; d < kMotionDims; ++d) mu[d] = motion[d];
  for (std::size_t d = 0; d < config_.appearance_dim(); ++d) {
    double v = base[d];
    if (code.style_id) v += styles_.embedding(*code.style_id)[d];
    mu[kMotionDims + d] = v;
  }
  return mu;
}

Sample SynthWorld::gen_toy_sample(std::uint64_t seed, const ConditionCode& code) const {
  const auto mu = toy_mean(code);
  VideoLatent video(config_.frames, config_.dim);
  CounterRng rng(seed, Purpose::kAppearanceNoise, static_cast<std::uint64_t>(code.content_id));
  for (std::size_t f = 0; f < config_.frames; ++f)
    for (std::size_t d = 0; d < config_.dim; ++d) video(f, d) = mu[d] + config_.toy_sigma0 * rng.normal();
  return {std::move(video), code};
}

VideoLatent SynthWorld::oracle_edit(const VideoLatent& video, std::optional<int> from_style,
                                    std::optional<int> to_style) const {
  if (video.dim() != config_.dim) throw ShapeError("oracle_edit: latent dim mismatch");
  if (from_style == to_style) return video;
  const std::size_t n = config_.appearance_dim();
  std::vector<double> shift(n, 0.0);
  if (to_style) {
    const auto e = styles_.embedding(*to_style);
    for (std::size_t d = 0; d < n; ++d) shift[d] += e[d];
  }
  if (from_style) {
    const auto e = styles_.embedding(*from_style);
    for (std::size_t d = 0; d < n; ++d) shift[d] -= e[d];
  }
  VideoLatent out = video;
  for (std::size_t f = 0; f < out.frames(); ++f)
    for (std::size_t d = 0; d < n; ++d) out(f, kMotionDims + d) += shift[d];
  return out;
}

std::vector<Sample> SynthWorld::sample_batch(CounterRng& rng, std::size_t batch_size,
                                             double style_fusion_prob,
                                             std::span<const int> style_pool) const {
  if (batch_size < 1) throw ContractError("sample_batch: batch_size must be >= 1");
  if (!(style_fusion_prob >= 0.0 && style_fusion_prob <= 1.0))
    throw RangeError("sample_batch: style_fusion_prob outside [0, 1]");
  std::vector<Sample> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::uint64_t seed = rng.next_u64();
    const int content = static_cast<int>(rng.below(static_cast<std::uint64_t>(config_.n_content)));
    std::optional<int> style;
    if (rng.bernoulli(style_fusion_prob)) {
      if (style_pool.empty())
        style = static_cast<int>(rng.below(static_cast<std::uint64_t>(config_.n_styles)));
      else
        style = style_pool[rng.below(style_pool.size())];
    }
    if (config_.gaussian_toy)
      out.push_back(gen_toy_sample(seed, ConditionCode::make(content, style)));
    else
      out.push_back(gen_sample(seed, content, style));
  }
  return out;
}

}  // namespace propfly
