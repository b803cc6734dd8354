#pragma once

// Flat key=value experiment configuration. One key per line, '#' starts a
// comment, blank lines are ignored. Unknown keys and unparseable values are
// ConfigError naming the key.

#include <string>
#include <utility>
#include <vector>

#include "procua/pipeline.hpp"

namespace procua {

struct RunConfig {
  ExperimentConfig experiment;
  std::string train_suite;  // optional task-suite file; generated from seeds if empty
  std::string eval_suite;
};

/// Every recognized key, in canonical order.
const std::vector<std::string>& config_keys();

/// Sets one key. Throws ConfigError.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Canonical value text of a key.
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Parses config text; `origin` labels error messages. Does not validate ranges.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");

/// Reads a file (IoError), applies `overrides` in order, then validates
/// (ConfigError on out-of-range values).
RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Checks ranges of an assembled config; out-of-range values are ConfigError.
void validate_config(const RunConfig& cfg);

/// The canonical key=value text; parse_config(render_config(c)) reproduces c.
std::string render_config(const RunConfig& cfg);

/// Training pool and eval suite for a config (loaded or generated).
std::pair<std::vector<Task>, std::vector<Task>> load_suites(const RunConfig& cfg);

/// Content hash of a task suite; equal suites hash equally however obtained.
std::uint64_t suite_fingerprint(std::span<const Task> tasks);

}  // namespace procua
