#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "propfly/backbone.hpp"
#include "propfly/param_store.hpp"
#include "propfly/synthvid.hpp"

namespace propfly {

// Trainable adapter (phi). It runs n_blocks / s_in blocks on the (F + 1)-row
// condition and feeds one injection per block into the frozen backbone.
struct AdapterParams {
  std::size_t n_blocks = 0;
  std::size_t s_in = 0;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::size_t width = 0;
  ParamStore store;

  const ad::Tensor& operator[](std::string_view name) const { return store.get(name); }
  static std::string head_weight(std::size_t block);
  static std::string head_bias(std::size_t block);
};

struct ConditionPack {
  VideoLatent source;              // F x D
  std::vector<double> edited_first;  // D
  ConditionCode caption;

  static ConditionPack from_pair(const VideoLatent& x_low, const VideoLatent& x_high, const ConditionCode& caption);
};

// Row 0 is the edited first frame, rows 1..F the source frames.
ad::Tensor assemble_condition(const ConditionPack& pack);

AdapterParams init_adapter(const BackboneConfig& backbone_config, std::uint64_t seed);
// Rebuilds an adapter from a stored table; names and shapes must match.
AdapterParams adapter_from_store(const BackboneConfig& backbone_config, const ParamStore& store);

// Per-block injections (F x width each) for the given backbone conditioning
// vector. `trace` receives the (F + 1)-row adapter state after every block.
std::vector<ad::Tensor> adapter_injections(const AdapterParams& phi, const ConditionPack& pack,
                                           const ad::Tensor& embedding, std::vector<ad::Tensor>* trace = nullptr);

// v_{theta,phi}(x_t, t, caption, pack) as a graph. `backbone_trace` receives
// the backbone hidden state after every block.
ad::Tensor joint_velocity_graph(const BackboneParams& theta, const AdapterParams& phi, const ad::Tensor& x_t, double t,
                                const ConditionCode& caption, const ConditionPack& pack,
                                std::vector<ad::Tensor>* backbone_trace = nullptr);

VideoLatent joint_velocity(const BackboneParams& theta, const AdapterParams& phi, const VideoLatent& x_t, double t,
                           const ConditionCode& caption, const ConditionPack& pack);

}  // namespace propfly
