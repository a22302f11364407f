// key=value run configuration shared by every CLI subcommand.
//
// Precedence, highest first: command-line flags and --set overrides, the
// config file, the SEED environment variable, built-in defaults.

#pragma once

#include "mosaic/model.hpp"
#include "mosaic/synthdata.hpp"
#include "mosaic/trainer.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace mosaic {

struct RunConfig {
  SynthConfig synth;
  std::size_t samples = 256;  ///< dataset size for gen-data / ablate
  ModelConfig model;
  InitOptions init;
  TrainConfig train;

  /// Sets one key; throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  /// Seeds data generation, initialization and training alike.
  void set_seed(std::uint64_t seed);

  /// Every recognised key.
  static const std::vector<std::string>& keys();
};

/// Parses `key = value` lines; '#' starts a comment, blank lines are skipped.
/// Throws ConfigError naming the line for malformed entries.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Reads a file; throws std::ios_base::failure when unreadable.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

}  // namespace mosaic
