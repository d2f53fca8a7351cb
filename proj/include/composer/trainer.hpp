#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "composer/dataset.hpp"
#include "composer/model.hpp"
#include "composer/preferences.hpp"

namespace composer {

enum class BaselineKind { kNone, kMovingAverage };

struct TrainConfig {
  int batch_size = 32;
  double lr = 0.03;  // ascent step size; 0 freezes the parameters (diagnostics)
  int steps = 1000;
  uint64_t seed = 1;
  BaselineKind baseline = BaselineKind::kMovingAverage;
  double baseline_decay = 0.99;
  std::vector<PreferenceSpec> prefs;  // at most one spec per cost kind
  int eval_cadence = 0;               // invoke the eval hook every k steps; 0 = never
  int workers = 1;

  void validate() const;  // throws ConfigError
};

/// Resolved strength of each cost kind for one step (0 when the kind is inactive).
struct GammaValues {
  double glimpse = 0.0;
  double batch_entropy = 0.0;
  double per_example = 0.0;
};

/// Per-example reward decomposition for one batch. `total` broadcasts the
/// batch-level entropy term into every example.
struct RewardBreakdown {
  std::vector<double> loglik;
  std::vector<double> glimpse;
  std::vector<double> per_example_entropy;
  double batch_entropy = 0.0;
  std::vector<double> total;

  double mean_loglik() const;
  double mean_total() const;
  /// Mean glimpse + mean per-example entropy + batch entropy.
  double mean_costs() const;
};

struct StepReport {
  int step = 0;
  double mean_reward = 0.0;
  double mean_loglik = 0.0;
  double mean_costs = 0.0;
  std::vector<double> gammas;  // sampled value per preference spec, in spec order
  double batch_accuracy = 0.0;
};

/// Mutable cross-step state owned by the caller of train_step.
struct TrainState {
  int step = 0;
  double baseline = 0.0;
};

/// Map the per-spec sampled gamma values onto cost kinds.
GammaValues resolve_gammas(const std::vector<PreferenceSpec>& prefs,
                           const std::vector<double>& sampled);

/// The gamma vector fed to the controller: the sampled values when the model
/// conditions on them (gamma_inputs == #prefs), empty when gamma_inputs == 0.
std::vector<double> controller_gammas(const ComposerConfig& cfg,
                                      const std::vector<PreferenceSpec>& prefs,
                                      const std::vector<double>& sampled);

/// Assemble per-example rewards: log-likelihood of the true label plus every
/// active preference cost, with the batch-level entropy cost broadcast.
RewardBreakdown batch_reward(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<Trajectory>& trajs, const GammaValues& gammas,
                             const std::vector<std::vector<double>>& beta_norm);

/// Diagnostics produced alongside the gradient.
struct GradientStats {
  RewardBreakdown reward;
  std::vector<Trajectory> trajs;
  Tensor logits;  // [N, num_classes], sampled-route logits
};

/// One-batch policy-gradient estimate, accumulated (+=) into the model's
/// parameter gradients. Per example e: one sampled route from the stream keyed
/// by (seed, route tag, step, e); surrogate = loglik + per-example entropy cost
/// + (reward - baseline) * path log-prob, seeded with 1/N; the batch entropy
/// cost contributes its exact pathwise gradient through the batch mean. The
/// result is independent of `workers` (per-example tapes, ordered merge).
GradientStats reinforce_gradient(ComposerModel& model, const Batch& batch,
                                 const std::vector<double>& sampled_gammas,
                                 const std::vector<PreferenceSpec>& prefs, uint64_t seed,
                                 uint64_t step, double baseline, int workers);

/// Exact objective and gradient for one example by enumerating every route.
struct ExactObjective {
  double objective = 0.0;     // sum over routes of p(route) * reward(route)
  double log_marginal = 0.0;  // ln sum over routes of p(route) * p(label|route)
  std::map<std::string, Tensor> grads;
};

/// Refuses (UsageError) when the route count exceeds 256 — this is a test
/// oracle for tiny models, not a training path. Leaves the model's parameter
/// gradients zeroed.
ExactObjective enumerate_exact_objective(ComposerModel& model, const std::vector<double>& x,
                                         int label, const std::vector<double>& sampled_gammas,
                                         const std::vector<PreferenceSpec>& prefs);

/// Sample gammas for the step, estimate the gradient, take one ascent step,
/// then update the baseline. Throws DivergenceError on non-finite reward or
/// gradient (before any parameter update).
StepReport train_step(ComposerModel& model, const Batch& batch, const TrainConfig& cfg,
                      TrainState& state);

using ReportSink = std::function<void(const StepReport&)>;
using EvalHook = std::function<void(int step, ComposerModel&)>;

/// Iterate train_step over shuffled constant-size batches for cfg.steps steps.
/// Emits one StepReport per step; invokes `eval_hook` every cfg.eval_cadence
/// steps when both are set.
void train_loop(ComposerModel& model, const LabeledDataset& data, const TrainConfig& cfg,
                const ReportSink& sink, const EvalHook& eval_hook = nullptr);

}  // namespace composer
