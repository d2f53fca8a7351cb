#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "composer/config.hpp"

namespace composer {

/// Flag values shared by every subcommand. Optional flags override the
/// corresponding config entries when set.
struct CliOptions {
  std::string config_path;  // --config (required)
  std::string checkpoint;   // --checkpoint; default <out>/checkpoint.bin
  std::string out_dir;      // --out; overrides [output] dir
  int64_t seed = -1;        // --seed; overrides every configured seed
  int workers = 0;          // --workers; overrides [train] workers
};

/// Load the config named by `opt`, apply flag overrides, and resolve the
/// output directory (flag, else config; empty → ConfigError).
ExperimentConfig resolve_config(const CliOptions& opt);

void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg, const std::string& checkpoint_path);
void cmd_heatmap(const ExperimentConfig& cfg, const std::string& checkpoint_path);
void cmd_ablate_entropy(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Full command-line entry point: parses subcommand + flags, dispatches, and
/// maps the error taxonomy to exit codes (0 ok, 2 config, 3 data, 4 divergence).
int run_cli(int argc, const char* const* argv);

std::string sha256_hex(const std::string& bytes);
std::string sha256_hex_file(const std::string& path);  // DataError when unreadable

}  // namespace composer
