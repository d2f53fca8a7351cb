#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "composer/dataset.hpp"
#include "composer/model.hpp"

namespace composer {

/// How routes are chosen during evaluation: kSampleMode draws per-example
/// routes from the controller (parameter use = realized beta of the chosen
/// modules); kExpectationMode routes deterministically by argmax and reports
/// the probability-weighted expected beta.
enum class EvalMode { kSampleMode, kExpectationMode };

const char* eval_mode_name(EvalMode m);

/// One evaluation of a fixed checkpoint at fixed test-time gamma values.
struct SweepPoint {
  std::vector<double> gammas;  // controller gamma vector used
  EvalMode mode = EvalMode::kSampleMode;
  double accuracy = 0.0;
  double mean_param_use = 0.0;  // raw beta counts per example
  /// Mean routing distribution per metalayer (for the random-mixing baseline:
  /// the empirical mixing frequencies actually used).
  std::vector<std::vector<double>> mean_distribution;
};

/// Per-example evaluation record for mutual-information diagnostics.
struct EvalTrace {
  std::vector<int> labels;                // one per example
  std::vector<std::vector<int>> choices;  // [metalayer][example]
};

struct Heatmap {
  int metalayer = 0;
  std::vector<double> gammas;
  std::vector<std::vector<double>> matrix;  // [class][module], rows mean to 1
  std::vector<int> class_counts;            // examples per class, ascending class order
};

/// Evaluate the model over the whole dataset at one gamma setting.
SweepPoint evaluate(ComposerModel& model, const LabeledDataset& ds,
                    const std::vector<double>& gamma, EvalMode mode, Rng& rng,
                    EvalTrace* trace = nullptr);

/// One (sample, expectation) pair of points per gamma vector, all against the
/// same fixed parameters. Deterministic for a fixed eval_seed.
std::vector<SweepPoint> preference_sweep(ComposerModel& model, const LabeledDataset& ds,
                                         const std::vector<std::vector<double>>& gamma_list,
                                         uint64_t eval_seed);

/// Ignore the controller: route each example to the larger of the two modules
/// with probability rho, else the smaller. Requires exactly one metalayer of
/// exactly two modules.
std::vector<SweepPoint> random_mixing_baseline(ComposerModel& model, const LabeledDataset& ds,
                                               const std::vector<double>& fractions,
                                               uint64_t eval_seed);

/// Mean routing distribution of one metalayer grouped by true class
/// (deterministic argmax routing decides the controller state path).
Heatmap module_class_heatmap(ComposerModel& model, const LabeledDataset& ds,
                             const std::vector<double>& gamma, int metalayer);

/// Plug-in mutual information (natural log) between two index arrays.
double mutual_information(const std::vector<int>& choices, const std::vector<int>& labels);

/// Sample-mode evaluation per test-time gamma vector; reports accuracy and the
/// mean per-metalayer selection distributions.
std::vector<SweepPoint> entropy_sweep(ComposerModel& model, const LabeledDataset& ds,
                                      const std::vector<std::vector<double>>& gamma_list,
                                      uint64_t eval_seed);

// ---- CSV emission -----------------------------------------------------------

/// Row of the sweep CSV. gamma_g / gamma_e are the glimpse and entropy
/// strengths of the point (0 when that preference is not in play).
struct SweepCsvRow {
  double gamma_g = 0.0;
  double gamma_e = 0.0;
  double accuracy = 0.0;
  double mean_param_use = 0.0;
  std::string mode;  // "sample" | "expectation" | "mix0.25" ...
  uint64_t seed = 0;
};

/// Header "gamma_g,gamma_e,accuracy,mean_param_use,mode,seed" plus a trailing
/// constant `checkpoint` column carrying the checkpoint digest.
std::string sweep_csv(const std::vector<SweepCsvRow>& rows, const std::string& checkpoint_hash);

/// Matrix with labeled rows (class) and columns (module00, module01, ...).
std::string heatmap_csv(const Heatmap& h);

}  // namespace composer
