#include "composer/preferences.hpp"

#include <algorithm>
#include <cmath>

#include "composer/errors.hpp"

namespace composer {

void PreferenceSpec::validate() const {
  if (gamma.zero_mass < 0.0 || gamma.zero_mass > 1.0)
    throw ConfigError("gamma zero mass must lie in [0,1]");
  switch (gamma.kind) {
    case GammaKind::kConstant:
      if (gamma.lo < 0.0) throw ConfigError("constant gamma must be non-negative");
      break;
    case GammaKind::kUniform:
      if (gamma.lo < 0.0 || gamma.hi < gamma.lo)
        throw ConfigError("uniform gamma needs 0 <= lo <= hi");
      break;
    case GammaKind::kLogUniform:
      if (gamma.lo <= 0.0 || gamma.hi < gamma.lo)
        throw ConfigError("log_uniform gamma needs 0 < lo <= hi");
      break;
  }
}

const char* cost_kind_name(CostKind k) {
  switch (k) {
    case CostKind::kGlimpse:
      return "glimpse";
    case CostKind::kBatchEntropy:
      return "batch_entropy";
    case CostKind::kPerExampleEntropy:
      return "per_example_entropy";
  }
  return "?";
}

CostKind cost_kind_from_name(const std::string& name) {
  if (name == "glimpse") return CostKind::kGlimpse;
  if (name == "batch_entropy") return CostKind::kBatchEntropy;
  if (name == "per_example_entropy") return CostKind::kPerExampleEntropy;
  throw ConfigError("unknown preference kind '" + name + "'");
}

namespace {

// Base-law draw, ignoring the zero mass.
double draw_base(const PreferenceSpec& spec, Rng& rng) {
  switch (spec.gamma.kind) {
    case GammaKind::kConstant:
      return spec.gamma.lo;
    case GammaKind::kUniform:
      return rng.uniform(spec.gamma.lo, spec.gamma.hi);
    case GammaKind::kLogUniform:
      return rng.log_uniform(spec.gamma.lo, spec.gamma.hi);
  }
  return 0.0;
}

}  // namespace

double sample_gamma(const PreferenceSpec& spec, Rng& rng) {
  spec.validate();
  // The zero-mass coin and the base draw are both always consumed so the
  // stream layout is fixed whether or not the point mass fires.
  if (spec.gamma.zero_mass > 0.0) {
    const bool zero = rng.next_double() < spec.gamma.zero_mass;
    const double draw = draw_base(spec, rng);
    return zero ? 0.0 : draw;
  }
  return draw_base(spec, rng);
}

std::vector<double> sample_gammas(const std::vector<PreferenceSpec>& specs, Rng& rng) {
  std::vector<double> out;
  out.reserve(specs.size());
  for (const PreferenceSpec& s : specs) out.push_back(sample_gamma(s, rng));
  return out;
}

std::vector<std::vector<double>> normalize_beta(
    const std::vector<std::vector<int64_t>>& beta) {
  std::vector<std::vector<double>> norm(beta.size());
  for (size_t i = 0; i < beta.size(); ++i) {
    int64_t mx = 0;
    for (int64_t b : beta[i]) mx = std::max(mx, b);
    for (int64_t b : beta[i])
      norm[i].push_back(mx > 0 ? static_cast<double>(b) / static_cast<double>(mx) : 0.0);
  }
  return norm;
}

std::vector<double> glimpse_cost(const std::vector<Trajectory>& trajs,
                                 const std::vector<std::vector<double>>& beta_norm,
                                 double gamma) {
  std::vector<double> out;
  out.reserve(trajs.size());
  for (const Trajectory& tr : trajs) {
    if (tr.choices.size() != beta_norm.size())
      throw UsageError("trajectory does not match the beta table");
    double acc = 0.0;
    for (size_t i = 0; i < tr.choices.size(); ++i) acc += beta_norm[i][tr.choices[i]];
    out.push_back(-gamma * acc);
  }
  return out;
}

std::vector<std::vector<double>> mean_distributions(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw UsageError("mean_distributions: empty batch");
  const size_t n = trajs[0].distributions.size();
  std::vector<std::vector<double>> mean(n);
  for (size_t i = 0; i < n; ++i) mean[i].assign(trajs[0].distributions[i].size(), 0.0);
  for (const Trajectory& tr : trajs) {
    if (tr.distributions.size() != n)
      throw UsageError("mean_distributions: inconsistent metalayer counts");
    for (size_t i = 0; i < n; ++i)
      for (size_t k = 0; k < mean[i].size(); ++k) mean[i][k] += tr.distributions[i][k];
  }
  const double inv = 1.0 / static_cast<double>(trajs.size());
  for (auto& row : mean)
    for (double& v : row) v *= inv;
  return mean;
}

double batch_entropy_cost(const std::vector<Trajectory>& trajs, double gamma) {
  const auto mean = mean_distributions(trajs);
  double acc = 0.0;
  for (const auto& row : mean)
    for (double v : row) acc += v * v;
  return -gamma * acc;
}

double per_example_entropy_cost(const Trajectory& traj, double gamma) {
  double acc = 0.0;
  for (const auto& p : traj.distributions)
    for (double v : p) acc += v * v;
  return -gamma * acc;
}

}  // namespace composer
