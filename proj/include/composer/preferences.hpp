#pragma once

#include <string>
#include <vector>

#include "composer/model.hpp"
#include "composer/rng.hpp"

namespace composer {

enum class CostKind { kGlimpse, kBatchEntropy, kPerExampleEntropy };

enum class GammaKind { kConstant, kUniform, kLogUniform };

/// Train-time distribution over preference strengths. `zero_mass` mixes in a
/// point mass at exactly 0 (probability of drawing 0 instead of the base law).
struct GammaDist {
  GammaKind kind = GammaKind::kConstant;
  double lo = 0.0;  // constant value, or lower bound
  double hi = 0.0;  // upper bound (unused for constant)
  double zero_mass = 0.0;
};

/// One active preference: the cost kind and how its strength is drawn.
struct PreferenceSpec {
  CostKind kind = CostKind::kGlimpse;
  GammaDist gamma;

  void validate() const;
};

const char* cost_kind_name(CostKind k);
CostKind cost_kind_from_name(const std::string& name);

/// One concrete strength per active preference, in spec order. This is both
/// the reward weighting and the controller's preference input vector.
std::vector<double> sample_gammas(const std::vector<PreferenceSpec>& specs, Rng& rng);
double sample_gamma(const PreferenceSpec& spec, Rng& rng);

/// Per-metalayer normalization of the raw parameter counts: beta / max(beta)
/// within each metalayer, so gamma ranges are comparable across topologies.
std::vector<std::vector<double>> normalize_beta(const std::vector<std::vector<int64_t>>& beta);

/// Glimpse cost per example: -gamma * sum_i beta_norm[i][c_i]. Depends only on
/// the choices, never on the distributions.
std::vector<double> glimpse_cost(const std::vector<Trajectory>& trajs,
                                 const std::vector<std::vector<double>>& beta_norm,
                                 double gamma);

/// Batch entropy cost: -gamma * sum_i ||mean_j p_i^(j)||^2 over the whole batch.
double batch_entropy_cost(const std::vector<Trajectory>& trajs, double gamma);

/// Per-example entropy cost: -gamma * sum_i ||p_i||^2 (the single-example
/// specialization of the batch form).
double per_example_entropy_cost(const Trajectory& traj, double gamma);

/// Mean routing distribution per metalayer across a batch of trajectories.
std::vector<std::vector<double>> mean_distributions(const std::vector<Trajectory>& trajs);

}  // namespace composer
