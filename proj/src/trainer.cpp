#include "composer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>

namespace composer {

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

/// Per-row log softmax at the true label, matching the taped op's arithmetic.
double log_softmax_value(const Tensor& logits, int row, int label) {
  const int k = logits.shape.back();
  const int base = row * k;
  double mx = logits.data[base];
  for (int j = 1; j < k; ++j) mx = std::max(mx, logits.data[base + j]);
  double sum = 0.0;
  for (int j = 0; j < k; ++j) sum += std::exp(logits.data[base + j] - mx);
  return logits.data[base + label] - mx - std::log(sum);
}

int argmax_row(const Tensor& logits, int row) {
  const int k = logits.shape.back();
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (logits.data[row * k + j] > logits.data[row * k + best]) best = j;
  return best;
}

/// Apply fn(e) for e in [0, n), sharded round-robin over `workers` threads.
/// The first exception thrown by any shard is rethrown on the calling thread.
void run_sharded(int n, int workers, const std::function<void(int)>& fn) {
  const int w = std::max(1, std::min(workers, n));
  if (w == 1) {
    for (int e = 0; e < n; ++e) fn(e);
    return;
  }
  std::mutex mu;
  std::exception_ptr first_error;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (int wid = 0; wid < w; ++wid) {
    threads.emplace_back([&, wid] {
      for (int e = wid; e < n; e += w) {
        try {
          fn(e);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  if (lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (baseline == BaselineKind::kMovingAverage &&
      (baseline_decay < 0.0 || baseline_decay >= 1.0))
    throw ConfigError("baseline decay must lie in [0, 1)");
  if (eval_cadence < 0) throw ConfigError("eval cadence must be non-negative");
  bool seen[3] = {false, false, false};
  for (const auto& s : prefs) {
    s.validate();
    bool& flag = seen[static_cast<int>(s.kind)];
    if (flag) throw ConfigError("duplicate preference spec for cost kind " +
                                std::string(cost_kind_name(s.kind)));
    flag = true;
  }
}

double RewardBreakdown::mean_loglik() const { return mean_of(loglik); }

double RewardBreakdown::mean_total() const { return mean_of(total); }

double RewardBreakdown::mean_costs() const {
  return mean_of(glimpse) + mean_of(per_example_entropy) + batch_entropy;
}

GammaValues resolve_gammas(const std::vector<PreferenceSpec>& prefs,
                           const std::vector<double>& sampled) {
  if (prefs.size() != sampled.size())
    throw UsageError("one sampled gamma per preference spec required");
  GammaValues g;
  for (size_t i = 0; i < prefs.size(); ++i) {
    switch (prefs[i].kind) {
      case CostKind::kGlimpse: g.glimpse = sampled[i]; break;
      case CostKind::kBatchEntropy: g.batch_entropy = sampled[i]; break;
      case CostKind::kPerExampleEntropy: g.per_example = sampled[i]; break;
    }
  }
  return g;
}

std::vector<double> controller_gammas(const ComposerConfig& cfg,
                                      const std::vector<PreferenceSpec>& prefs,
                                      const std::vector<double>& sampled) {
  if (prefs.size() != sampled.size())
    throw UsageError("one sampled gamma per preference spec required");
  const int g = cfg.controller.gamma_inputs;
  if (g == 0) return {};
  if (g != static_cast<int>(prefs.size()))
    throw ConfigError("controller expects " + std::to_string(g) +
                      " gamma inputs but " + std::to_string(prefs.size()) +
                      " preference specs are configured");
  return sampled;
}

RewardBreakdown batch_reward(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<Trajectory>& trajs, const GammaValues& gammas,
                             const std::vector<std::vector<double>>& beta_norm) {
  const int n = static_cast<int>(labels.size());
  if (logits.ndim() != 2 || logits.shape[0] != n)
    throw UsageError("logits must be [batch, classes]");
  if (static_cast<int>(trajs.size()) != n)
    throw UsageError("one trajectory per example required");
  const int k = logits.shape[1];

  RewardBreakdown r;
  r.loglik.resize(n);
  for (int e = 0; e < n; ++e) {
    if (labels[e] < 0 || labels[e] >= k) throw DataError("label out of range in batch");
    r.loglik[e] = log_softmax_value(logits, e, labels[e]);
  }
  r.glimpse = glimpse_cost(trajs, beta_norm, gammas.glimpse);
  r.per_example_entropy.resize(n);
  for (int e = 0; e < n; ++e)
    r.per_example_entropy[e] = per_example_entropy_cost(trajs[e], gammas.per_example);
  r.batch_entropy = batch_entropy_cost(trajs, gammas.batch_entropy);
  r.total.resize(n);
  for (int e = 0; e < n; ++e)
    r.total[e] = r.loglik[e] + r.glimpse[e] + r.per_example_entropy[e] + r.batch_entropy;
  return r;
}

GradientStats reinforce_gradient(ComposerModel& model, const Batch& batch,
                                 const std::vector<double>& sampled_gammas,
                                 const std::vector<PreferenceSpec>& prefs, uint64_t seed,
                                 uint64_t step, double baseline, int workers) {
  const int n = batch.size();
  if (n <= 0) throw UsageError("reinforce_gradient needs a non-empty batch");
  if (batch.xs.size() != static_cast<size_t>(n))
    throw UsageError("batch xs/ys size mismatch");
  const GammaValues gv = resolve_gammas(prefs, sampled_gammas);
  const std::vector<double> gctrl = controller_gammas(model.config(), prefs, sampled_gammas);
  const auto beta_norm = normalize_beta(model.beta_table());
  const int classes = model.config().num_classes;
  const int input_size = model.config().input_size();

  // Validate inputs up front so the sharded phases cannot throw.
  for (int e = 0; e < n; ++e) {
    if (static_cast<int>(batch.xs[e].size()) != input_size)
      throw DataError("input size mismatch in batch");
    if (batch.ys[e] < 0 || batch.ys[e] >= classes)
      throw DataError("label out of range in batch");
  }

  // Phase 1: taped forward per example, route sampled from a per-example
  // keyed stream so the result is independent of sharding.
  std::vector<std::unique_ptr<Tape>> tapes(n);
  std::vector<ExampleRun> runs(n);
  std::vector<ValueId> ll_nodes(n);
  run_sharded(n, workers, [&](int e) {
    tapes[e] = std::make_unique<Tape>();
    Rng rng = Rng::keyed(seed, {kTagRoute, step, static_cast<uint64_t>(e)});
    runs[e] = model.run_example(*tapes[e], Tensor::row(batch.xs[e]), gctrl, RouteMode::kSample,
                                &rng);
    ll_nodes[e] = log_likelihood(*tapes[e], runs[e].logits, {batch.ys[e]});
  });

  // Rewards need every example's routing distribution (batch entropy term).
  GradientStats out;
  out.logits = Tensor::zeros({n, classes});
  out.trajs.resize(n);
  for (int e = 0; e < n; ++e) {
    const Tensor& row = tapes[e]->value(runs[e].logits);
    for (int j = 0; j < classes; ++j) out.logits.at(e, j) = row.data[j];
    out.trajs[e] = runs[e].traj;
  }
  out.reward = batch_reward(out.logits, batch.ys, out.trajs, gv, beta_norm);
  const auto mean_dist = mean_distributions(out.trajs);

  // Phase 2: per-example surrogate and backward pass.
  //   surrogate = loglik + per-example entropy cost + (reward - baseline) * lp
  // seeded with 1/N, plus the batch entropy cost's exact pathwise adjoint
  // -gamma * (2/N) * mean injected directly on each routing distribution.
  run_sharded(n, workers, [&](int e) {
    Tape& t = *tapes[e];
    ValueId surr = ll_nodes[e];
    if (gv.per_example != 0.0) {
      std::vector<ValueId> sq;
      sq.reserve(runs[e].dist_nodes.size());
      for (ValueId d : runs[e].dist_nodes) sq.push_back(sum_squares(t, d));
      surr = add(t, surr, affine_scalar(t, add_stack(t, sq), -gv.per_example, 0.0));
    }
    const double w = out.reward.total[e] - baseline;
    surr = add(t, surr, affine_scalar(t, runs[e].path_log_prob, w, 0.0));

    std::vector<std::pair<ValueId, Tensor>> seeds;
    seeds.emplace_back(surr, Tensor::scalar(1.0 / n));
    if (gv.batch_entropy != 0.0) {
      for (size_t i = 0; i < runs[e].dist_nodes.size(); ++i) {
        Tensor sd = Tensor::zeros({static_cast<int>(mean_dist[i].size())});
        for (size_t k = 0; k < mean_dist[i].size(); ++k)
          sd.data[k] = -gv.batch_entropy * (2.0 / n) * mean_dist[i][k];
        seeds.emplace_back(runs[e].dist_nodes[i], std::move(sd));
      }
    }
    t.backward_collect(seeds);
  });

  // Ordered merge: ascending example index, so the sum is identical for any
  // worker count.
  for (int e = 0; e < n; ++e) {
    for (const auto& pg : tapes[e]->param_grads()) {
      if (!pg.grad) continue;
      Tensor& acc = pg.store->entry(pg.id).grad;
      for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += pg.grad->data[i];
    }
  }
  return out;
}

ExactObjective enumerate_exact_objective(ComposerModel& model, const std::vector<double>& x,
                                         int label, const std::vector<double>& sampled_gammas,
                                         const std::vector<PreferenceSpec>& prefs) {
  const ComposerConfig& cfg = model.config();
  int64_t route_count = 1;
  for (const auto& ml : cfg.metalayers) {
    route_count *= static_cast<int64_t>(ml.modules.size());
    if (route_count > 256)
      throw UsageError("route space too large to enumerate (limit 256)");
  }
  if (label < 0 || label >= cfg.num_classes) throw DataError("label out of range");
  const GammaValues gv = resolve_gammas(prefs, sampled_gammas);
  const std::vector<double> gctrl = controller_gammas(cfg, prefs, sampled_gammas);
  const auto beta_norm = normalize_beta(model.beta_table());
  const int n_meta = static_cast<int>(cfg.metalayers.size());

  Tape t;
  const Tensor xt = Tensor::row(x);
  std::vector<int> route(n_meta, 0);
  ValueId objective = -1;
  double marginal = 0.0;
  // At batch size one the batch entropy cost reduces to the per-example form,
  // so both entropy kinds share one squared-norm chain.
  const double entropy_coeff = -(gv.per_example + gv.batch_entropy);
  for (int64_t r = 0; r < route_count; ++r) {
    ExampleRun run = model.run_example(t, xt, gctrl, RouteMode::kSample, nullptr, &route);
    const ValueId ll = log_likelihood(t, run.logits, {label});
    ValueId reward = ll;
    if (entropy_coeff != 0.0) {
      std::vector<ValueId> sq;
      sq.reserve(run.dist_nodes.size());
      for (ValueId d : run.dist_nodes) sq.push_back(sum_squares(t, d));
      reward = add(t, reward, affine_scalar(t, add_stack(t, sq), entropy_coeff, 0.0));
    }
    const double c1 = glimpse_cost({run.traj}, beta_norm, gv.glimpse)[0];
    if (c1 != 0.0) reward = affine_scalar(t, reward, 1.0, c1);
    const ValueId prob = exp_op(t, run.path_log_prob);
    const ValueId term = mul(t, prob, reward);
    objective = (objective < 0) ? term : add(t, objective, term);
    marginal += t.value(prob).data[0] * std::exp(t.value(ll).data[0]);

    for (int i = n_meta - 1; i >= 0; --i) {  // odometer, last metalayer fastest
      if (++route[i] < static_cast<int>(cfg.metalayers[i].modules.size())) break;
      route[i] = 0;
    }
  }

  ExactObjective out;
  out.objective = t.value(objective).data[0];
  out.log_marginal = std::log(marginal);
  model.params().zero_grads();
  t.backward(objective, 1.0);
  for (const auto& [id, entry] : model.params().entries()) out.grads.emplace(id, entry.grad);
  model.params().zero_grads();
  return out;
}

StepReport train_step(ComposerModel& model, const Batch& batch, const TrainConfig& cfg,
                      TrainState& state) {
  cfg.validate();
  Rng gamma_rng = Rng::keyed(cfg.seed, {kTagGamma, static_cast<uint64_t>(state.step)});
  std::vector<double> sampled;
  sampled.reserve(cfg.prefs.size());
  for (const auto& s : cfg.prefs) sampled.push_back(sample_gamma(s, gamma_rng));

  const double baseline =
      cfg.baseline == BaselineKind::kMovingAverage ? state.baseline : 0.0;
  GradientStats gs = reinforce_gradient(model, batch, sampled, cfg.prefs, cfg.seed,
                                        static_cast<uint64_t>(state.step), baseline,
                                        cfg.workers);

  const double mean_total = gs.reward.mean_total();
  if (!std::isfinite(mean_total))
    throw DivergenceError("training diverged: non-finite reward at step " +
                          std::to_string(state.step));
  for (const auto& [id, entry] : model.params().entries())
    for (double g : entry.grad.data)
      if (!std::isfinite(g))
        throw DivergenceError("training diverged: non-finite gradient in " + id + " at step " +
                              std::to_string(state.step));

  if (cfg.lr > 0.0)
    sgd_step(model.params(), cfg.lr);
  else
    model.params().zero_grads();

  if (cfg.baseline == BaselineKind::kMovingAverage)
    state.baseline =
        cfg.baseline_decay * state.baseline + (1.0 - cfg.baseline_decay) * mean_total;

  StepReport report;
  report.step = state.step;
  report.mean_reward = mean_total;
  report.mean_loglik = gs.reward.mean_loglik();
  report.mean_costs = gs.reward.mean_costs();
  report.gammas = sampled;
  int correct = 0;
  for (int e = 0; e < batch.size(); ++e)
    if (argmax_row(gs.logits, e) == batch.ys[e]) ++correct;
  report.batch_accuracy = static_cast<double>(correct) / batch.size();
  state.step += 1;
  return report;
}

void train_loop(ComposerModel& model, const LabeledDataset& data, const TrainConfig& cfg,
                const ReportSink& sink, const EvalHook& eval_hook) {
  cfg.validate();
  if (cfg.batch_size > data.count)
    throw ConfigError("batch size " + std::to_string(cfg.batch_size) +
                      " exceeds dataset size " + std::to_string(data.count));
  // Fail fast on a controller/preference arity mismatch.
  (void)controller_gammas(model.config(), cfg.prefs,
                          std::vector<double>(cfg.prefs.size(), 0.0));

  BatchIterator batches(data, cfg.batch_size, cfg.seed);
  TrainState state;
  for (int s = 0; s < cfg.steps; ++s) {
    const Batch b = batches.next();
    const StepReport report = train_step(model, b, cfg, state);
    if (sink) sink(report);
    if (eval_hook && cfg.eval_cadence > 0 && (s + 1) % cfg.eval_cadence == 0)
      eval_hook(s + 1, model);
  }
}

}  // namespace composer
