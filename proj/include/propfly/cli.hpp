#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "propfly/config.hpp"
#include "propfly/eval.hpp"

namespace propfly {

inline constexpr const char* kMetricsHeader = "experiment,seed,sample_id,metric,value";

// Per-sample rows followed by one aggregate row (sample_id "mean") per
// (experiment, seed, metric).
std::string metrics_csv(const MetricReport& report);
MetricReport parse_metrics_csv(std::string_view text);
std::string loss_csv(const std::vector<double>& trace);

// Writes <name>.csv, <name>.summary.json and <name>.plot.gp into out_dir and
// returns their paths. `loss_files` are plotted as loss curves.
std::vector<std::filesystem::path> metrics_emit(const MetricReport& report, const std::filesystem::path& out_dir,
                                                bool overwrite,
                                                const std::vector<std::filesystem::path>& loss_files = {});

// Record of one command: config, seed, input hashes, every output file with
// its hash, and wall time.
struct RunManifest {
  std::string command;
  std::string config_text;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;   // path, sha256
  std::vector<std::pair<std::string, std::string>> outputs;  // path, sha256
  double wall_seconds = 0.0;

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  std::string to_json() const;
};

// Entry point behind the propfly executable. Returns 0 on success, 2 on
// usage errors and 1 on runtime failures.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace propfly
