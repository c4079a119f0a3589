#pragma once

#include <string>
#include <vector>

#include "gpo/trainer.hpp"

namespace gpo {

/// Parse failure with the offending location (1-based line and column).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, int col, const std::string& msg)
      : std::runtime_error("config error at line " + std::to_string(line) + ", column " +
                           std::to_string(col) + ": " + msg),
        line(line),
        col(col) {}
  int line;
  int col;
};

/// One experiment: a base training configuration fanned out over an
/// algorithm list and a seed list.
struct ExperimentConfig {
  std::string name = "run";
  std::string outdir = "out";
  std::vector<uint64_t> seeds;
  std::vector<Algorithm> algorithms;
  GpoConfig base;
  bool parallel_seeds = false;

  void validate() const;
};

// Named defaults: "didactic" (TigerDoor-scale), "continuous"
// (navigation-scale), "memory" (repeat-previous-scale).
void apply_preset(GpoConfig& config, const std::string& preset);

/// Line-oriented key = value format with [experiment], [env] and [train]
/// sections; '#' starts a comment. Unknown sections, unknown keys and
/// duplicate keys are rejected with their location. The grammar is spelled
/// out in docs/config.md.
ExperimentConfig parse_experiment_text(const std::string& text);
ExperimentConfig parse_experiment_file(const std::string& path);

}  // namespace gpo
