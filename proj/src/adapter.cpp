#include "propfly/adapter.hpp"

#include <cmath>
#include <string>

#include "propfly/errors.hpp"

namespace propfly {

namespace {

std::string block_name(std::size_t j, const char* part) { return "adapter" + std::to_string(j) + "." + part; }

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

// F x (F + 1) selector that drops row 0.
ad::Tensor drop_first_row(std::size_t frames) {
  std::vector<double> v(frames * (frames + 1), 0.0);
  for (std::size_t f = 0; f < frames; ++f) v[f * (frames + 1) + f + 1] = 1.0;
  return ad::Tensor::from({frames, frames + 1}, std::move(v));
}

ad::Tensor affine(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b, const ad::Tensor& ones) {
  return ad::add(ad::matmul(x, w), ad::matmul(ones, b));
}

void check_compatible(const BackboneConfig& config, const AdapterParams& phi) {
  if (phi.s_in != config.s_in || phi.n_blocks != config.adapter_blocks())
    throw ConfigError("adapter has " + std::to_string(phi.n_blocks) + " blocks at stride " + std::to_string(phi.s_in) +
                      ", backbone expects " + std::to_string(config.adapter_blocks()) + " at stride " +
                      std::to_string(config.s_in));
  if (phi.frames != config.frames || phi.dim != config.dim || phi.width != config.width)
    throw ConfigError("adapter and backbone extents differ");
}

}  // namespace

std::string AdapterParams::head_weight(std::size_t block) { return block_name(block, "head.w"); }
std::string AdapterParams::head_bias(std::size_t block) { return block_name(block, "head.b"); }

ConditionPack ConditionPack::from_pair(const VideoLatent& x_low, const VideoLatent& x_high,
                                       const ConditionCode& caption) {
  const auto first = x_high.row(0);
  return {x_low, std::vector<double>(first.begin(), first.end()), caption};
}

ad::Tensor assemble_condition(const ConditionPack& pack) {
  if (pack.caption.is_null) throw ContractError("assemble_condition: caption must not be null");
  const std::size_t F = pack.source.frames(), D = pack.source.dim();
  if (pack.edited_first.size() != D)
    throw ShapeError("assemble_condition: edited first frame has " + std::to_string(pack.edited_first.size()) +
                     " dims, source has " + std::to_string(D));
  std::vector<double> v;
  v.reserve((F + 1) * D);
  v.insert(v.end(), pack.edited_first.begin(), pack.edited_first.end());
  v.insert(v.end(), pack.source.values().begin(), pack.source.values().end());
  return ad::Tensor::from({F + 1, D}, std::move(v));
}

AdapterParams init_adapter(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  AdapterParams p;
  p.n_blocks = config.adapter_blocks();
  p.s_in = config.s_in;
  p.frames = config.frames;
  p.dim = config.dim;
  p.width = config.width;
  CounterRng rng(seed, Purpose::kInitAdapter);
  const auto D = config.dim, W = config.width, R = config.frames + 1;
  const double inv_d = 1.0 / std::sqrt(static_cast<double>(D));
  const double inv_w = 1.0 / std::sqrt(static_cast<double>(W));
  const Role r = Role::kPhi;

  p.store.add("adapter.in.w", normal_tensor(rng, {D, W}, inv_d), r);
  p.store.add("adapter.in.b", ad::Tensor::zeros({1, W}, true), r);
  for (std::size_t j = 0; j < p.n_blocks; ++j) {
    p.store.add(block_name(j, "proj"), normal_tensor(rng, {W, W}, inv_w), r);
    p.store.add(block_name(j, "fc1.w"), normal_tensor(rng, {W, W}, inv_w), r);
    p.store.add(block_name(j, "fc1.b"), ad::Tensor::zeros({1, W}, true), r);
    p.store.add(block_name(j, "fc2.w"), normal_tensor(rng, {W, W}, inv_w), r);
    p.store.add(block_name(j, "fc2.b"), ad::Tensor::zeros({1, W}, true), r);
    p.store.add(block_name(j, "mix"), identity(R), r);
    p.store.add(AdapterParams::head_weight(j), ad::Tensor::zeros({W, W}, true), r);
    p.store.add(AdapterParams::head_bias(j), ad::Tensor::zeros({1, W}, true), r);
  }
  return p;
}

AdapterParams adapter_from_store(const BackboneConfig& config, const ParamStore& store) {
  AdapterParams p = init_adapter(config, 0);
  ParamStore loaded;
  for (const auto& e : p.store) {
    const auto& src = store.entry(e.name);
    if (src.tensor.shape() != e.tensor.shape())
      throw ShapeError("adapter tensor '" + e.name + "' has shape " + ad::shape_string(src.tensor.shape()) +
                       ", expected " + ad::shape_string(e.tensor.shape()));
    loaded.add(e.name, src.tensor.clone(true), Role::kPhi);
  }
  p.store = std::move(loaded);
  return p;
}

std::vector<ad::Tensor> adapter_injections(const AdapterParams& phi, const ConditionPack& pack,
                                           const ad::Tensor& embedding, std::vector<ad::Tensor>* trace) {
  const ad::Tensor cond_rows = assemble_condition(pack);
  if (pack.source.frames() != phi.frames || pack.source.dim() != phi.dim)
    throw ShapeError("adapter: source latent is " + std::to_string(pack.source.frames()) + "x" +
                     std::to_string(pack.source.dim()) + ", adapter expects " + std::to_string(phi.frames) + "x" +
                     std::to_string(phi.dim));
  const ad::Tensor ones = ad::Tensor::filled({phi.frames + 1, 1}, 1.0);
  const ad::Tensor select = drop_first_row(phi.frames);
  ad::Tensor h = affine(cond_rows, phi["adapter.in.w"], phi["adapter.in.b"], ones);
  std::vector<ad::Tensor> out;
  out.reserve(phi.n_blocks);
  for (std::size_t j = 0; j < phi.n_blocks; ++j) {
    const ad::Tensor z = ad::add(h, ad::matmul(ones, ad::matmul(embedding, phi[block_name(j, "proj")])));
    const ad::Tensor a = ad::gelu(affine(z, phi[block_name(j, "fc1.w")], phi[block_name(j, "fc1.b")], ones));
    const ad::Tensor u = affine(a, phi[block_name(j, "fc2.w")], phi[block_name(j, "fc2.b")], ones);
    h = ad::matmul(phi[block_name(j, "mix")], ad::add(h, u));
    if (trace) trace->push_back(h);
    out.push_back(ad::matmul(select, affine(h, phi[AdapterParams::head_weight(j)], phi[AdapterParams::head_bias(j)], ones)));
  }
  return out;
}

ad::Tensor joint_velocity_graph(const BackboneParams& theta, const AdapterParams& phi, const ad::Tensor& x_t, double t,
                                const ConditionCode& caption, const ConditionPack& pack,
                                std::vector<ad::Tensor>* backbone_trace) {
  if (!theta.frozen) throw ContractError("joint_velocity: backbone must be frozen");
  check_compatible(theta.config, phi);
  if (!(pack.caption == caption))
    throw ContractError("joint_velocity: pack caption " + pack.caption.str() + " differs from " + caption.str());
  const ad::Tensor embedding = backbone_embedding(theta, t, caption);
  const auto injections = adapter_injections(phi, pack, embedding);
  return backbone_forward(theta, x_t, embedding, injections, backbone_trace);
}

VideoLatent joint_velocity(const BackboneParams& theta, const AdapterParams& phi, const VideoLatent& x_t, double t,
                           const ConditionCode& caption, const ConditionPack& pack) {
  ad::NoGradGuard no_grad;
  return VideoLatent::from_tensor(joint_velocity_graph(theta, phi, x_t.to_tensor(), t, caption, pack));
}

}  // namespace propfly
