#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "composer/model.hpp"
#include "doctest.h"

using namespace composer;

namespace {

Tensor random_input(Rng& rng, int n, double lo = 0.0, double hi = 1.0) {
  Tensor t = Tensor::zeros({n});
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// 1x4 input, one metalayer of `m` small MLP modules, 3 classes. The 1x4 pool
// grid makes controller features the raw pixels.
ComposerConfig tiny_cfg(int m = 2, int gamma_inputs = 0) {
  ComposerConfig cfg;
  cfg.input_rows = 1;
  cfg.input_cols = 4;
  cfg.num_classes = 3;
  cfg.controller.hidden_size = 6;
  cfg.controller.pool_rows = 1;
  cfg.controller.pool_cols = 4;
  cfg.controller.gamma_inputs = gamma_inputs;
  MetalayerSpec ml;
  for (int j = 0; j < m; ++j) {
    ModuleSpec mod;
    mod.hidden = {5};
    mod.output = 3;
    ml.modules.push_back(mod);
  }
  cfg.metalayers.push_back(ml);
  return cfg;
}

// Single identity module: logits are exactly the (possibly stem-processed) input.
ComposerConfig passthrough_cfg(GlimpseKind kind = GlimpseKind::kActivations) {
  ComposerConfig cfg;
  cfg.input_rows = 2;
  cfg.input_cols = 2;
  cfg.num_classes = 4;
  cfg.controller.hidden_size = 4;
  cfg.controller.pool_rows = 1;
  cfg.controller.pool_cols = 1;
  MetalayerSpec ml;
  ModuleSpec mod;
  mod.glimpse.kind = kind;
  mod.identity = true;
  ml.modules.push_back(mod);
  cfg.metalayers.push_back(ml);
  return cfg;
}

void randomize(ParamStore& ps, const std::string& id, Rng& rng, double scale) {
  for (double& v : ps.entry(id).value.data) v = rng.uniform(-scale, scale);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config validation rejects malformed topologies") {
  // Raw-input glimpse beyond metalayer 1.
  ComposerConfig cfg = tiny_cfg(2);
  MetalayerSpec second;
  ModuleSpec bad;
  bad.glimpse.kind = GlimpseKind::kFull;
  bad.hidden = {};
  bad.output = 3;
  second.modules.push_back(bad);
  cfg.metalayers.push_back(second);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  // Out-of-bounds rectangle.
  ComposerConfig cfg2 = tiny_cfg(1);
  cfg2.metalayers[0].modules[0].glimpse = {GlimpseKind::kRect, 0, 2, 1, 3};
  CHECK_THROWS_AS(cfg2.validate(), ConfigError);

  // Disagreeing output widths within a metalayer.
  ComposerConfig cfg3 = tiny_cfg(2);
  cfg3.metalayers[0].modules[1].output = 5;
  CHECK_THROWS_AS(cfg3.validate(), ConfigError);

  // Last metalayer must emit num_classes.
  ComposerConfig cfg4 = tiny_cfg(1);
  cfg4.num_classes = 7;
  CHECK_THROWS_AS(cfg4.validate(), ConfigError);

  CHECK_NOTHROW(tiny_cfg(3).validate());
}

TEST_CASE("config text round-trip is a fixed point") {
  ComposerConfig cfg;
  cfg.input_rows = 28;
  cfg.input_cols = 56;
  cfg.num_classes = 20;
  cfg.stem = {};
  cfg.controller.hidden_size = 32;
  cfg.controller.pool_rows = 7;
  cfg.controller.pool_cols = 14;
  cfg.controller.gamma_inputs = 2;
  MetalayerSpec ml;
  ModuleSpec small;
  small.glimpse = {GlimpseKind::kRect, 0, 0, 28, 28};
  small.hidden = {16};
  small.output = 20;
  ModuleSpec large;
  large.glimpse.kind = GlimpseKind::kFull;
  large.hidden = {64};
  large.output = 20;
  ml.modules = {small, large};
  cfg.metalayers.push_back(ml);
  cfg.validate();

  const std::string text = cfg.canonical_text();
  ComposerConfig parsed = ComposerConfig::parse_text(text);
  CHECK(parsed.canonical_text() == text);

  // Second model flavor: stem + identity module.
  ComposerConfig pass = passthrough_cfg();
  const std::string text2 = pass.canonical_text();
  CHECK(ComposerConfig::parse_text(text2).canonical_text() == text2);

  CHECK_THROWS_AS(ComposerConfig::parse_text("bogus v1\n"), ConfigError);
  CHECK_THROWS_AS(ComposerConfig::parse_text("composer-config v1\ninput 2 2\n"), ConfigError);
}

TEST_CASE("identity stem and identity module pass the input through") {
  ComposerModel model(passthrough_cfg(), 11);
  Rng rng(5);
  Tensor x = random_input(rng, 4);
  Tape t;
  ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);
  CHECK(t.value(run.logits).data == x.data);
}

TEST_CASE("linear stem with identity weights preserves a non-negative input") {
  ComposerConfig cfg = passthrough_cfg();
  cfg.stem = {4};
  ComposerModel model(cfg, 11);
  // Overwrite the stem with the identity map; ReLU is a no-op on x >= 0.
  Tensor& W = model.params().entry("stem.l00.W").value;
  std::fill(W.data.begin(), W.data.end(), 0.0);
  for (int i = 0; i < 4; ++i) W.at(i, i) = 1.0;
  Rng rng(6);
  Tensor x = random_input(rng, 4, 0.0, 1.0);
  Tape t;
  ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);
  CHECK(t.value(run.logits).data == x.data);
}

TEST_CASE("random stem matches straight-line re-evaluation") {
  ComposerConfig cfg = passthrough_cfg();
  cfg.stem = {3};
  cfg.num_classes = 3;  // identity module now emits the 3-wide stem output
  ComposerModel model(cfg, 923);
  Rng rng(7);
  Tensor x = random_input(rng, 4);
  Tape t;
  ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);

  const Tensor& W = model.params().entry("stem.l00.W").value;
  const Tensor& b = model.params().entry("stem.l00.b").value;
  for (int o = 0; o < 3; ++o) {
    double acc = b.at(o);
    for (int k = 0; k < 4; ++k) acc += x.at(k) * W.at(k, o);
    acc = acc > 0 ? acc : 0;
    CHECK(t.value(run.logits).at(o) == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("zero-initialized controller heads route uniformly") {
  for (int m : {2, 3, 5}) {
    ComposerModel model(tiny_cfg(m), 42);
    Rng rng(1);
    Tensor x = random_input(rng, 4);
    Tape t;
    ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);
    REQUIRE(static_cast<int>(run.traj.distributions[0].size()) == m);
    for (double p : run.traj.distributions[0])
      CHECK(p == doctest::Approx(1.0 / m).epsilon(1e-12));
    CHECK(run.traj.choices[0] == 0);  // argmax tie broken to the lowest index
  }
}

TEST_CASE("controller output is deterministic and gamma-sensitive") {
  ComposerModel model(tiny_cfg(2, 1), 77);
  Rng rng(3);
  randomize(model.params(), "ctrl.head00.W", rng, 0.8);
  Tensor x = random_input(rng, 4);
  std::vector<int> route{0};

  Tape t1, t2;
  ExampleRun a = model.run_example(t1, x, {0.3}, RouteMode::kSample, nullptr, &route);
  ExampleRun b = model.run_example(t2, x, {0.3}, RouteMode::kSample, nullptr, &route);
  CHECK(a.traj.distributions[0] == b.traj.distributions[0]);

  const double h = 1e-4;
  Tape t3;
  ExampleRun c = model.run_example(t3, x, {0.3 + h}, RouteMode::kSample, nullptr, &route);
  const double slope = std::fabs(c.traj.distributions[0][0] - a.traj.distributions[0][0]) / h;
  CHECK(slope > 1e-8);  // routing reacts to the preference input
}

TEST_CASE("sample_choice honors the distribution") {
  Rng rng(1234);
  for (int k = 0; k < 100; ++k) CHECK(sample_choice({1.0, 0.0}, RouteMode::kSample, &rng) == 0);

  CHECK(sample_choice({0.3, 0.7}, RouteMode::kArgmax, nullptr) == 1);
  CHECK(sample_choice({0.5, 0.5}, RouteMode::kArgmax, nullptr) == 0);

  const int n = 100000;
  int count0 = 0;
  for (int i = 0; i < n; ++i)
    if (sample_choice({0.25, 0.75}, RouteMode::kSample, &rng) == 0) ++count0;
  const double freq = static_cast<double>(count0) / n;
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  CHECK(std::fabs(freq - 0.25) < 3.0 * sigma);

  CHECK_THROWS_AS(sample_choice({0.5, 0.6}, RouteMode::kSample, &rng), UsageError);
  CHECK_THROWS_AS(sample_choice({}, RouteMode::kArgmax, nullptr), UsageError);
}

TEST_CASE("full glimpse forwards the whole image") {
  ComposerModel model(passthrough_cfg(GlimpseKind::kFull), 5);
  Rng rng(8);
  Tensor x = random_input(rng, 4);
  Tape t;
  ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);
  CHECK(t.value(run.logits).data == x.data);
}

TEST_CASE("rectangular glimpse equals the flatten-then-index oracle") {
  // Left 28x28 block of a 28x56 image.
  ComposerConfig cfg;
  cfg.input_rows = 28;
  cfg.input_cols = 56;
  cfg.num_classes = 784;
  cfg.controller.pool_rows = 7;
  cfg.controller.pool_cols = 14;
  MetalayerSpec ml;
  ModuleSpec crop;
  crop.glimpse = {GlimpseKind::kRect, 0, 0, 28, 28};
  crop.identity = true;
  ml.modules.push_back(crop);
  cfg.metalayers.push_back(ml);
  ComposerModel model(cfg, 3);

  Rng rng(9);
  Tensor x = random_input(rng, 28 * 56);
  Tape t;
  ExampleRun run = model.run_example(t, x, {}, RouteMode::kArgmax, nullptr);
  const Tensor& y = t.value(run.logits);
  REQUIRE(y.numel() == 784);
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c) CHECK(y.at(r * 28 + c) == x.at(r * 56 + c));

  // Interior rectangle with distinct offsets.
  ComposerConfig cfg2 = cfg;
  cfg2.num_classes = 4 * 7;
  cfg2.metalayers[0].modules[0].glimpse = {GlimpseKind::kRect, 3, 5, 4, 7};
  ComposerModel model2(cfg2, 3);
  Tape t2;
  ExampleRun run2 = model2.run_example(t2, x, {}, RouteMode::kArgmax, nullptr);
  const Tensor& y2 = t2.value(run2.logits);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 7; ++c) CHECK(y2.at(r * 7 + c) == x.at((3 + r) * 56 + (5 + c)));
}

TEST_CASE("identical modules make logits route-invariant") {
  ComposerModel model(tiny_cfg(2), 10);
  for (const char* suffix : {"l00.W", "l00.b", "l01.W", "l01.b"}) {
    model.params().entry(std::string("m00.01.") + suffix).value =
        model.params().entry(std::string("m00.00.") + suffix).value;
  }
  Rng rng(4);
  Tensor x = random_input(rng, 4);
  std::vector<int> r0{0}, r1{1};
  Tape t0, t1;
  ExampleRun a = model.run_example(t0, x, {}, RouteMode::kSample, nullptr, &r0);
  ExampleRun b = model.run_example(t1, x, {}, RouteMode::kSample, nullptr, &r1);
  CHECK(t0.value(a.logits).data == t1.value(b.logits).data);
}

TEST_CASE("sampled trajectories are reproducible from the seed") {
  ComposerModel model(tiny_cfg(3), 21);
  Rng r1 = Rng::keyed(99, {kTagRoute, 0});
  Rng r2 = Rng::keyed(99, {kTagRoute, 0});
  Rng rx(2);
  Tensor batch = Tensor::zeros({6, 4});
  for (double& v : batch.data) v = rx.uniform(0, 1);

  auto [logits1, trajs1] = model.compose_forward(batch, {}, RouteMode::kSample, r1);
  auto [logits2, trajs2] = model.compose_forward(batch, {}, RouteMode::kSample, r2);
  CHECK(logits1.data == logits2.data);
  for (size_t e = 0; e < trajs1.size(); ++e) {
    CHECK(trajs1[e].choices == trajs2[e].choices);
    CHECK(trajs1[e].distributions == trajs2[e].distributions);
    CHECK(trajs1[e].path_log_prob == trajs2[e].path_log_prob);
  }
}

TEST_CASE("trajectory invariants: valid distributions, consistent log-prob") {
  ComposerModel model(tiny_cfg(3), 31);
  Rng rng(12);
  randomize(model.params(), "ctrl.head00.W", rng, 1.0);
  Rng route_rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_input(rng, 4);
    Tape t;
    ExampleRun run = model.run_example(t, x, {}, RouteMode::kSample, &route_rng);
    double recomputed = 0.0;
    for (size_t i = 0; i < run.traj.choices.size(); ++i) {
      const auto& p = run.traj.distributions[i];
      double sum = 0.0;
      for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-9);
      recomputed += std::log(p[run.traj.choices[i]]);
    }
    CHECK(std::fabs(recomputed - run.traj.path_log_prob) < 1e-12);
  }
}

TEST_CASE("sampled logits converge to the route mixture") {
  ComposerModel model(tiny_cfg(2), 17);
  Rng rng(90);
  randomize(model.params(), "ctrl.head00.W", rng, 1.2);
  Tensor x = random_input(rng, 4);

  std::vector<int> r0{0}, r1{1};
  Tape ta, tb;
  ExampleRun runa = model.run_example(ta, x, {}, RouteMode::kSample, nullptr, &r0);
  ExampleRun runb = model.run_example(tb, x, {}, RouteMode::kSample, nullptr, &r1);
  const Tensor l0 = ta.value(runa.logits);
  const Tensor l1 = tb.value(runb.logits);
  const double p0 = runa.traj.distributions[0][0];
  const double p1 = 1.0 - p0;

  const int n = 100000;
  Rng route_rng = Rng::keyed(3, {kTagRoute});
  std::vector<double> mean(3, 0.0);
  for (int s = 0; s < n; ++s) {
    Tape t;
    ExampleRun run = model.run_example(t, x, {}, RouteMode::kSample, &route_rng);
    const Tensor& l = t.value(run.logits);
    for (int k = 0; k < 3; ++k) mean[k] += l.at(k);
  }
  for (int k = 0; k < 3; ++k) {
    mean[k] /= n;
    const double mix = p0 * l0.at(k) + p1 * l1.at(k);
    const double se = std::fabs(l0.at(k) - l1.at(k)) * std::sqrt(p0 * p1 / n);
    CHECK(std::fabs(mean[k] - mix) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("module parameter counts are exact") {
  // Single affine 784 -> 10.
  ComposerConfig cfg;
  cfg.input_rows = 28;
  cfg.input_cols = 28;
  cfg.num_classes = 10;
  cfg.controller.pool_rows = 7;
  cfg.controller.pool_cols = 7;
  MetalayerSpec ml;
  ModuleSpec affine_mod;
  affine_mod.glimpse.kind = GlimpseKind::kFull;
  affine_mod.output = 10;
  ml.modules.push_back(affine_mod);
  cfg.metalayers.push_back(ml);
  CHECK(ComposerModel(cfg, 1).module_param_count(0, 0) == 7850);

  // 1568 -> 64 -> 20 on a 28x56 input.
  ComposerConfig cfg2;
  cfg2.input_rows = 28;
  cfg2.input_cols = 56;
  cfg2.num_classes = 20;
  cfg2.controller.pool_rows = 7;
  cfg2.controller.pool_cols = 14;
  MetalayerSpec ml2;
  ModuleSpec big;
  big.glimpse.kind = GlimpseKind::kFull;
  big.hidden = {64};
  big.output = 20;
  ml2.modules.push_back(big);
  cfg2.metalayers.push_back(ml2);
  ComposerModel m2(cfg2, 1);
  CHECK(m2.module_param_count(0, 0) == 101716);
  CHECK(m2.beta_table() == std::vector<std::vector<int64_t>>{{101716}});

  // Identity costs nothing.
  ComposerModel m3(passthrough_cfg(), 1);
  CHECK(m3.module_param_count(0, 0) == 0);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ComposerConfig cfg = tiny_cfg(2, 1);
  cfg.stem = {6};
  ComposerModel model(cfg, 424242);
  Rng rng(77);
  randomize(model.params(), "ctrl.head00.W", rng, 0.7);

  const std::string p1 = "/tmp/composer_ckpt_a.bin";
  const std::string p2 = "/tmp/composer_ckpt_b.bin";
  model.save(p1);
  ComposerModel loaded = ComposerModel::load(p1);
  loaded.save(p2);
  CHECK(slurp(p1) == slurp(p2));

  // Predictions survive the round-trip exactly.
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_input(rng, 4);
    Tape ta, tb;
    ExampleRun a = model.run_example(ta, x, {0.5}, RouteMode::kArgmax, nullptr);
    ExampleRun b = loaded.run_example(tb, x, {0.5}, RouteMode::kArgmax, nullptr);
    CHECK(ta.value(a.logits).data == tb.value(b.logits).data);
    CHECK(a.traj.choices == b.traj.choices);
  }

  // Corrupted magic.
  std::string bytes = slurp(p1);
  bytes[0] = 'X';
  std::ofstream(p2, std::ios::binary).write(bytes.data(), bytes.size());
  CHECK_THROWS_AS(ComposerModel::load(p2), DataError);

  // Truncation.
  std::ofstream(p2, std::ios::binary).write(slurp(p1).data(), bytes.size() - 9);
  CHECK_THROWS_AS(ComposerModel::load(p2), DataError);

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("full composed model passes a finite-difference check on a fixed route") {
  ComposerConfig cfg = tiny_cfg(2, 1);
  cfg.stem = {5};
  ComposerModel model(cfg, 999);
  Rng rng(13);
  randomize(model.params(), "ctrl.head00.W", rng, 0.6);
  Tensor x = random_input(rng, 4);
  std::vector<int> route{1};

  auto loss = [&](bool with_grad) {
    if (with_grad) model.params().zero_grads();
    Tape t;
    ExampleRun run = model.run_example(t, x, {0.4}, RouteMode::kSample, nullptr, &route);
    ValueId ll = log_likelihood(t, run.logits, {2});
    ValueId obj = add(t, ll, affine_scalar(t, run.path_log_prob, 0.7, 0.0));
    for (ValueId p : run.dist_nodes)
      obj = add(t, obj, affine_scalar(t, sum_squares(t, p), 0.3, 0.0));
    ValueId root = sum_all(t, obj);
    if (with_grad) t.backward(root);
    return t.value(root).item();
  };
  CHECK(finite_diff_check(model.params(), loss, 1e-6) < 1e-5);
}
