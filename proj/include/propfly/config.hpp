#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "propfly/backbone.hpp"
#include "propfly/eval.hpp"
#include "propfly/gmfm.hpp"
#include "propfly/synthvid.hpp"

namespace propfly {

// Every tunable of a run. Module seeds are derived from `seed`; the
// evaluation set has its own seed so that runs at different training seeds
// are scored on the same edits.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  SynthConfig synth{};
  BackboneConfig backbone{};
  PretrainConfig pretrain{};
  TrainConfig train{};
  EvalConfig eval{};

  // Copies `seed` into the module configs and checks cross-module extents.
  ExperimentConfig resolved() const;
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// "key = value" lines grouped by dotted prefix; '#' starts a comment.
std::string render_config(const ExperimentConfig& config);
// Unknown or repeated keys and malformed values are rejected with the line
// number. Keys not present keep their defaults.
ExperimentConfig parse_config(std::string_view text);
// Applies one "key=value" override.
void set_config_value(ExperimentConfig& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

// SHA-256 of the rendered config.
std::string config_hash(const ExperimentConfig& config);

// PROPFLY_OUT_DIR and PROPFLY_SEED, when set.
void apply_env_overrides(ExperimentConfig& config);

}  // namespace propfly
