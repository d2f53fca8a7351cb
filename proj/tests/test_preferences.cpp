#include <algorithm>
#include <cmath>
#include <vector>

#include "composer/preferences.hpp"
#include "doctest.h"

using namespace composer;

namespace {

Trajectory make_traj(std::vector<std::vector<double>> dists, std::vector<int> choices) {
  Trajectory t;
  t.distributions = std::move(dists);
  t.choices = std::move(choices);
  return t;
}

PreferenceSpec spec_of(GammaKind kind, double lo, double hi = 0.0, double zero_mass = 0.0) {
  PreferenceSpec s;
  s.kind = CostKind::kGlimpse;
  s.gamma = {kind, lo, hi, zero_mass};
  return s;
}

}  // namespace

TEST_CASE("sample_gamma: constant and bounds") {
  Rng rng(1);
  CHECK(sample_gamma(spec_of(GammaKind::kConstant, 0.0), rng) == 0.0);
  CHECK(sample_gamma(spec_of(GammaKind::kConstant, 0.7), rng) == 0.7);

  PreferenceSpec bad = spec_of(GammaKind::kUniform, 0.5, 0.2);
  CHECK_THROWS_AS(sample_gamma(bad, rng), ConfigError);
  PreferenceSpec bad2 = spec_of(GammaKind::kLogUniform, 0.0, 1.0);
  CHECK_THROWS_AS(sample_gamma(bad2, rng), ConfigError);
}

TEST_CASE("sample_gamma: uniform mean within 3 sigma") {
  Rng rng(22);
  PreferenceSpec s = spec_of(GammaKind::kUniform, 0.0, 1.0);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_gamma(s, rng);
  const double mean = sum / n;
  const double sigma = (1.0 / std::sqrt(12.0)) / std::sqrt(static_cast<double>(n));
  CHECK(std::fabs(mean - 0.5) < 3.0 * sigma);
}

TEST_CASE("sample_gamma: log_uniform passes a KS test on ln gamma") {
  Rng rng(33);
  PreferenceSpec s = spec_of(GammaKind::kLogUniform, 1e-3, 1.0);
  const int n = 100000;
  std::vector<double> lg(n);
  for (int i = 0; i < n; ++i) {
    const double g = sample_gamma(s, rng);
    CHECK(g >= 1e-3);
    CHECK(g <= 1.0);
    lg[i] = std::log(g);
  }
  std::sort(lg.begin(), lg.end());
  const double a = std::log(1e-3), b = 0.0;
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = (lg[i] - a) / (b - a);
    d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  const double critical = 1.6276 / std::sqrt(static_cast<double>(n));  // alpha = 0.01
  CHECK(d < critical);
}

TEST_CASE("sample_gamma: zero point mass fires at the configured rate") {
  Rng rng(44);
  PreferenceSpec s = spec_of(GammaKind::kLogUniform, 1e-3, 1.0, 0.1);
  const int n = 100000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    const double g = sample_gamma(s, rng);
    if (g == 0.0)
      ++zeros;
    else {
      CHECK(g >= 1e-3);
      CHECK(g <= 1.0);
    }
  }
  const double frac = static_cast<double>(zeros) / n;
  const double sigma = std::sqrt(0.1 * 0.9 / n);
  CHECK(std::fabs(frac - 0.1) < 3.0 * sigma);
}

TEST_CASE("normalize_beta scales each metalayer by its largest module") {
  auto norm = normalize_beta({{2000, 10000}, {500, 500}});
  CHECK(norm[0][0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(norm[0][1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(norm[1][0] == doctest::Approx(1.0).epsilon(1e-15));
  // All-identity metalayer: no parameters anywhere, cost weight 0.
  CHECK(normalize_beta({{0, 0}})[0] == std::vector<double>{0.0, 0.0});
}

TEST_CASE("glimpse_cost analytic values are exact") {
  const std::vector<std::vector<double>> beta1{{0.2, 1.0}};
  // gamma = 0 wipes the cost.
  auto zero = glimpse_cost({make_traj({{0.5, 0.5}}, {1})}, beta1, 0.0);
  CHECK(zero[0] == 0.0);

  // Single metalayer, large module chosen, gamma 0.5.
  auto one = glimpse_cost({make_traj({{0.5, 0.5}}, {1})}, beta1, 0.5);
  CHECK(std::fabs(one[0] - (-0.5)) <= 1e-12);

  // Two metalayers, small module both times, gamma 1.
  const std::vector<std::vector<double>> beta2{{0.2, 1.0}, {0.2, 1.0}};
  auto two = glimpse_cost({make_traj({{0.5, 0.5}, {0.5, 0.5}}, {0, 0})}, beta2, 1.0);
  CHECK(std::fabs(two[0] - (-0.4)) <= 1e-12);
}

TEST_CASE("glimpse_cost is monotone in the chosen module's size") {
  const std::vector<std::vector<double>> beta{{0.1, 0.4, 1.0}};
  const double g = 0.7;
  auto small = glimpse_cost({make_traj({{1, 0, 0}}, {0})}, beta, g)[0];
  auto mid = glimpse_cost({make_traj({{1, 0, 0}}, {1})}, beta, g)[0];
  auto large = glimpse_cost({make_traj({{1, 0, 0}}, {2})}, beta, g)[0];
  CHECK(small >= mid);
  CHECK(mid >= large);
}

TEST_CASE("batch_entropy_cost analytic values are exact") {
  const double g = 0.8;
  // Two examples split across two modules: mean [0.5,0.5].
  auto t1 = make_traj({{1.0, 0.0}}, {0});
  auto t2 = make_traj({{0.0, 1.0}}, {1});
  CHECK(std::fabs(batch_entropy_cost({t1, t2}, g) - (-0.5 * g)) <= 1e-12);

  // Everyone one-hot on the same module, n metalayers: worst case -gamma*n.
  auto same = make_traj({{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}}, {0, 0, 0});
  CHECK(std::fabs(batch_entropy_cost({same, same}, g) - (-3.0 * g)) <= 1e-12);

  // Uniform distributions, m modules, n metalayers: best case -gamma*n/m.
  auto uni = make_traj({{0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}}, {0, 0});
  CHECK(std::fabs(batch_entropy_cost({uni, uni, uni}, g) - (-g * 2.0 / 4.0)) <= 1e-12);

  // gamma = 0 wipes it.
  CHECK(batch_entropy_cost({t1, t2}, 0.0) == 0.0);
}

TEST_CASE("per_example_entropy_cost analytic values are exact") {
  const double g = 1.3;
  CHECK(std::fabs(per_example_entropy_cost(make_traj({{1.0, 0.0}}, {0}), g) - (-g)) <= 1e-12);
  CHECK(std::fabs(per_example_entropy_cost(make_traj({{0.25, 0.25, 0.25, 0.25}}, {0}), g) -
                  (-g / 4.0)) <= 1e-12);
  CHECK(per_example_entropy_cost(make_traj({{0.3, 0.7}}, {0}), 0.0) == 0.0);

  // N=1 batch form coincides with the per-example form.
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    double a = rng.uniform(0, 1);
    double b = rng.uniform(0, 1 - a);
    auto tr = make_traj({{a, b, 1 - a - b}, {0.6, 0.4}}, {0, 0});
    CHECK(batch_entropy_cost({tr}, 0.9) ==
          doctest::Approx(per_example_entropy_cost(tr, 0.9)).epsilon(1e-15));
  }
}

TEST_CASE("batch_entropy_cost is permutation- and relabeling-invariant") {
  auto t1 = make_traj({{0.7, 0.2, 0.1}}, {0});
  auto t2 = make_traj({{0.1, 0.6, 0.3}}, {1});
  auto t3 = make_traj({{0.4, 0.4, 0.2}}, {0});
  const double g = 0.5;
  const double base = batch_entropy_cost({t1, t2, t3}, g);
  CHECK(batch_entropy_cost({t3, t1, t2}, g) == doctest::Approx(base).epsilon(1e-15));

  // Synchronized relabeling: swap modules 0 and 2 in every example.
  auto swap02 = [](Trajectory tr) {
    for (auto& p : tr.distributions) std::swap(p[0], p[2]);
    return tr;
  };
  CHECK(batch_entropy_cost({swap02(t1), swap02(t2), swap02(t3)}, g) ==
        doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("batch entropy reward peaks exactly at the uniform mean") {
  const double g = 1.0;
  const int m = 4;
  auto uni = make_traj({std::vector<double>(m, 1.0 / m)}, {0});
  const double best = batch_entropy_cost({uni, uni}, g);
  CHECK(best == doctest::Approx(-g / m).epsilon(1e-12));

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    // Perturb within the simplex: move mass eps from one entry to another.
    std::vector<double> p(m, 1.0 / m);
    const int from = rng.uniform_int(m);
    int to = rng.uniform_int(m - 1);
    if (to >= from) ++to;
    const double eps = rng.uniform(1e-4, 1.0 / m);
    p[from] -= eps;
    p[to] += eps;
    auto perturbed = make_traj({p}, {0});
    CHECK(batch_entropy_cost({perturbed, perturbed}, g) < best);
  }
}

TEST_CASE("batch_entropy_cost gradient matches -gamma*(2/N)*mean analytically") {
  Rng rng(88);
  const double g = 0.65;
  const int n_batch = 3, m = 3;
  std::vector<Trajectory> trajs;
  for (int e = 0; e < n_batch; ++e) {
    double a = rng.uniform(0.1, 0.5), b = rng.uniform(0.1, 0.4);
    trajs.push_back(make_traj({{a, b, 1 - a - b}, {0.5, 0.5, 0.0}}, {0, 1}));
  }
  const auto mean = mean_distributions(trajs);

  const double h = 1e-6;
  for (int e = 0; e < n_batch; ++e)
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < m; ++k) {
        auto plus = trajs, minus = trajs;
        plus[e].distributions[i][k] += h;
        minus[e].distributions[i][k] -= h;
        const double fd =
            (batch_entropy_cost(plus, g) - batch_entropy_cost(minus, g)) / (2 * h);
        const double analytic = -g * (2.0 / n_batch) * mean[i][k];
        CHECK(std::fabs(fd - analytic) <= 1e-8);
      }
}
