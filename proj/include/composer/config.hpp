#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "composer/model.hpp"
#include "composer/trainer.hpp"

namespace composer {

/// Full declarative description of one experiment: dataset paths, the model
/// topology, training hyperparameters, and the evaluation protocol. One file
/// determines every artifact a command emits; there is no ambient state.
///
/// Text format: a `composer-experiment v1` header followed by `[section]`
/// blocks of key-per-line entries. The [model] block uses the model config
/// grammar verbatim. `#` lines are comments. Unknown sections or keys are
/// rejected. parse → canonical_text → parse is a fixed point.
struct ExperimentConfig {
  // [dataset] — IDX files the experiment consumes, plus (for gen-data) the
  // source files a synthetic set is derived from.
  std::string train_images, train_labels;
  std::string test_images, test_labels;
  std::string source_images, source_labels;
  std::string source_test_images, source_test_labels;
  uint64_t synthesis_seed = 1;

  // [model]
  bool has_model = false;
  ComposerConfig model;

  // [train]
  TrainConfig train;

  // [sweep]
  uint64_t eval_seed = 1;
  std::vector<double> gamma_g;  // glimpse strengths to sweep
  std::vector<double> gamma_e;  // entropy strengths to sweep
  std::vector<double> rho;      // random-mixing fractions for the baseline

  // [heatmap]
  double heatmap_gamma_g = 0.0;
  double heatmap_gamma_e = 0.0;

  // [eval]
  double eval_gamma_g = 0.0;
  double eval_gamma_e = 0.0;

  // [ablate]
  std::vector<uint64_t> ablate_seeds;
  double ablate_gamma_e = 0.0;
  int ablate_steps = 0;  // 0 = inherit [train] steps

  // [output]
  std::string out_dir;

  std::string canonical_text() const;
  static ExperimentConfig parse_text(const std::string& text);  // throws ConfigError
  static ExperimentConfig load(const std::string& path);        // throws ConfigError
};

}  // namespace composer
