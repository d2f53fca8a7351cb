#include "composer/analysis.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <vector>

#include "composer/autodiff.hpp"
#include "composer/errors.hpp"

namespace composer {
namespace {

int argmax_flat(const Tensor& v) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(v.data.size()); ++j)
    if (v.data[j] > v.data[best]) best = j;
  return best;
}

void check_compatible(const ComposerModel& model, const LabeledDataset& ds) {
  const auto& cfg = model.config();
  if (ds.rows * ds.cols != cfg.input_size())
    throw ConfigError("evaluation dataset image size " + std::to_string(ds.rows) + "x" +
                      std::to_string(ds.cols) + " does not match model input " +
                      std::to_string(cfg.input_rows) + "x" + std::to_string(cfg.input_cols));
  if (ds.num_classes > cfg.num_classes)
    throw ConfigError("evaluation dataset has " + std::to_string(ds.num_classes) +
                      " classes but the model emits only " + std::to_string(cfg.num_classes) +
                      " logits");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

const char* eval_mode_name(EvalMode m) {
  return m == EvalMode::kSampleMode ? "sample" : "expectation";
}

SweepPoint evaluate(ComposerModel& model, const LabeledDataset& ds,
                    const std::vector<double>& gamma, EvalMode mode, Rng& rng, EvalTrace* trace) {
  check_compatible(model, ds);
  if (ds.count == 0) throw UsageError("cannot evaluate on an empty dataset");
  const auto beta = model.beta_table();
  const int n_meta = model.config().num_metalayers();

  SweepPoint pt;
  pt.gammas = gamma;
  pt.mode = mode;
  pt.mean_distribution.resize(n_meta);
  for (int i = 0; i < n_meta; ++i)
    pt.mean_distribution[i].assign(beta[i].size(), 0.0);
  if (trace) {
    trace->labels.assign(ds.labels.begin(), ds.labels.end());
    trace->choices.assign(n_meta, std::vector<int>(ds.count, 0));
  }

  const RouteMode route = mode == EvalMode::kSampleMode ? RouteMode::kSample : RouteMode::kArgmax;
  Rng* route_rng = mode == EvalMode::kSampleMode ? &rng : nullptr;
  int64_t correct = 0;
  double use_sum = 0.0;
  for (int e = 0; e < ds.count; ++e) {
    Tape t;
    const ExampleRun run = model.run_example(t, Tensor::row(ds.example(e)), gamma, route, route_rng);
    if (argmax_flat(t.value(run.logits)) == ds.labels[e]) ++correct;
    for (int i = 0; i < n_meta; ++i) {
      const auto& p = run.traj.distributions[i];
      for (size_t j = 0; j < p.size(); ++j) pt.mean_distribution[i][j] += p[j];
      if (mode == EvalMode::kSampleMode) {
        use_sum += static_cast<double>(beta[i][run.traj.choices[i]]);
      } else {
        for (size_t j = 0; j < p.size(); ++j) use_sum += p[j] * static_cast<double>(beta[i][j]);
      }
      if (trace) trace->choices[i][e] = run.traj.choices[i];
    }
  }
  const double n = static_cast<double>(ds.count);
  pt.accuracy = static_cast<double>(correct) / n;
  pt.mean_param_use = use_sum / n;
  for (auto& dist : pt.mean_distribution)
    for (auto& v : dist) v /= n;
  return pt;
}

std::vector<SweepPoint> preference_sweep(ComposerModel& model, const LabeledDataset& ds,
                                         const std::vector<std::vector<double>>& gamma_list,
                                         uint64_t eval_seed) {
  std::vector<SweepPoint> points;
  points.reserve(2 * gamma_list.size());
  for (size_t gi = 0; gi < gamma_list.size(); ++gi) {
    for (EvalMode mode : {EvalMode::kSampleMode, EvalMode::kExpectationMode}) {
      Rng rng = Rng::keyed(eval_seed, {kTagEval, static_cast<uint64_t>(gi),
                                       mode == EvalMode::kSampleMode ? 0ull : 1ull});
      points.push_back(evaluate(model, ds, gamma_list[gi], mode, rng));
    }
  }
  return points;
}

std::vector<SweepPoint> random_mixing_baseline(ComposerModel& model, const LabeledDataset& ds,
                                               const std::vector<double>& fractions,
                                               uint64_t eval_seed) {
  check_compatible(model, ds);
  const auto& cfg = model.config();
  if (cfg.num_metalayers() != 1 || cfg.metalayers[0].modules.size() != 2)
    throw ConfigError("random mixing baseline requires exactly one metalayer of exactly two "
                      "modules; model has " + std::to_string(cfg.num_metalayers()) +
                      " metalayer(s)");
  for (double rho : fractions)
    if (!(rho >= 0.0 && rho <= 1.0))
      throw ConfigError("mixing fraction must lie in [0, 1], got " + format_double(rho));

  const auto beta = model.beta_table();
  const int large = beta[0][1] >= beta[0][0] ? 1 : 0;
  const int small = 1 - large;
  const std::vector<double> gamma(cfg.controller.gamma_inputs, 0.0);

  std::vector<SweepPoint> points;
  points.reserve(fractions.size());
  for (size_t ri = 0; ri < fractions.size(); ++ri) {
    const double rho = fractions[ri];
    Rng rng = Rng::keyed(eval_seed, {kTagBaselineMix, static_cast<uint64_t>(ri)});
    SweepPoint pt;
    pt.gammas = gamma;
    pt.mode = EvalMode::kSampleMode;
    pt.mean_distribution.assign(1, std::vector<double>(2, 0.0));
    int64_t correct = 0;
    double use_sum = 0.0;
    for (int e = 0; e < ds.count; ++e) {
      const int pick = rng.next_double() < rho ? large : small;
      const std::vector<int> forced{pick};
      Tape t;
      const ExampleRun run =
          model.run_example(t, Tensor::row(ds.example(e)), gamma, RouteMode::kSample, nullptr,
                            &forced);
      if (argmax_flat(t.value(run.logits)) == ds.labels[e]) ++correct;
      use_sum += static_cast<double>(beta[0][pick]);
      pt.mean_distribution[0][pick] += 1.0;
    }
    const double n = static_cast<double>(ds.count);
    pt.accuracy = static_cast<double>(correct) / n;
    pt.mean_param_use = use_sum / n;
    for (auto& v : pt.mean_distribution[0]) v /= n;
    points.push_back(std::move(pt));
  }
  return points;
}

Heatmap module_class_heatmap(ComposerModel& model, const LabeledDataset& ds,
                             const std::vector<double>& gamma, int metalayer) {
  check_compatible(model, ds);
  const auto& cfg = model.config();
  if (metalayer < 0 || metalayer >= cfg.num_metalayers())
    throw UsageError("heatmap metalayer index " + std::to_string(metalayer) +
                     " out of range for a model with " + std::to_string(cfg.num_metalayers()) +
                     " metalayer(s)");
  const int m = static_cast<int>(cfg.metalayers[metalayer].modules.size());

  Heatmap h;
  h.metalayer = metalayer;
  h.gammas = gamma;
  h.matrix.assign(ds.num_classes, std::vector<double>(m, 0.0));
  h.class_counts.assign(ds.num_classes, 0);
  for (int e = 0; e < ds.count; ++e) {
    Tape t;
    const ExampleRun run =
        model.run_example(t, Tensor::row(ds.example(e)), gamma, RouteMode::kArgmax, nullptr);
    const int y = ds.labels[e];
    const auto& p = run.traj.distributions[metalayer];
    for (int j = 0; j < m; ++j) h.matrix[y][j] += p[j];
    ++h.class_counts[y];
  }
  for (int c = 0; c < ds.num_classes; ++c)
    if (h.class_counts[c] > 0)
      for (auto& v : h.matrix[c]) v /= static_cast<double>(h.class_counts[c]);
  return h;
}

double mutual_information(const std::vector<int>& choices, const std::vector<int>& labels) {
  if (choices.size() != labels.size())
    throw UsageError("mutual information inputs differ in length: " +
                     std::to_string(choices.size()) + " vs " + std::to_string(labels.size()));
  if (choices.empty()) throw UsageError("mutual information of empty arrays is undefined");
  int m = 0, k = 0;
  for (size_t e = 0; e < choices.size(); ++e) {
    if (choices[e] < 0 || labels[e] < 0)
      throw UsageError("mutual information inputs must be non-negative indices");
    m = std::max(m, choices[e] + 1);
    k = std::max(k, labels[e] + 1);
  }
  std::vector<std::vector<int64_t>> joint(m, std::vector<int64_t>(k, 0));
  std::vector<int64_t> row(m, 0), col(k, 0);
  for (size_t e = 0; e < choices.size(); ++e) {
    ++joint[choices[e]][labels[e]];
    ++row[choices[e]];
    ++col[labels[e]];
  }
  const double n = static_cast<double>(choices.size());
  double mi = 0.0;  // 0 * log 0 := 0, so empty cells contribute nothing
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < k; ++b)
      if (joint[a][b] > 0) {
        const double p = static_cast<double>(joint[a][b]) / n;
        const double pa = static_cast<double>(row[a]) / n;
        const double pb = static_cast<double>(col[b]) / n;
        mi += p * std::log(p / (pa * pb));
      }
  return std::max(mi, 0.0);
}

std::vector<SweepPoint> entropy_sweep(ComposerModel& model, const LabeledDataset& ds,
                                      const std::vector<std::vector<double>>& gamma_list,
                                      uint64_t eval_seed) {
  std::vector<SweepPoint> points;
  points.reserve(gamma_list.size());
  for (size_t gi = 0; gi < gamma_list.size(); ++gi) {
    Rng rng = Rng::keyed(eval_seed, {kTagEval, static_cast<uint64_t>(gi)});
    points.push_back(evaluate(model, ds, gamma_list[gi], EvalMode::kSampleMode, rng));
  }
  return points;
}

std::string sweep_csv(const std::vector<SweepCsvRow>& rows, const std::string& checkpoint_hash) {
  std::string out = "gamma_g,gamma_e,accuracy,mean_param_use,mode,seed,checkpoint\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%s,%" PRIu64 ",%s\n",
                  format_double(r.gamma_g).c_str(), format_double(r.gamma_e).c_str(),
                  format_double(r.accuracy).c_str(), format_double(r.mean_param_use).c_str(),
                  r.mode.c_str(), r.seed, checkpoint_hash.c_str());
    out += buf;
  }
  return out;
}

std::string heatmap_csv(const Heatmap& h) {
  std::string out = "class";
  const int m = h.matrix.empty() ? 0 : static_cast<int>(h.matrix[0].size());
  for (int j = 0; j < m; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), ",module%02d", j);
    out += buf;
  }
  out += "\n";
  for (size_t c = 0; c < h.matrix.size(); ++c) {
    out += std::to_string(c);
    for (int j = 0; j < m; ++j) out += "," + format_double(h.matrix[c][j]);
    out += "\n";
  }
  return out;
}

}  // namespace composer
