#include "composer/commands.hpp"

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "composer/analysis.hpp"
#include "composer/dataset.hpp"
#include "composer/errors.hpp"
#include "composer/preferences.hpp"
#include "json.hpp"

namespace composer {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw DataError("failed writing file: " + path);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

/// Every command leaves a canonical copy of its config next to its outputs so
/// the run can be reproduced from the output directory alone.
void write_config_copy(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  write_file(out_path(cfg, "config.txt"), cfg.canonical_text());
}

/// Per-preference strengths for a test-time (gamma_g, gamma_e) pair, in the
/// order the training preferences declare.
std::vector<double> strengths_for(const std::vector<PreferenceSpec>& prefs, double gamma_g,
                                  double gamma_e) {
  std::vector<double> out;
  out.reserve(prefs.size());
  for (const auto& p : prefs)
    out.push_back(p.kind == CostKind::kGlimpse ? gamma_g : gamma_e);
  return out;
}

LabeledDataset load_train_set(const ExperimentConfig& cfg) {
  if (cfg.train_images.empty() || cfg.train_labels.empty())
    throw ConfigError("[dataset] train_images and train_labels are required for this command");
  return load_idx(cfg.train_images, cfg.train_labels);
}

LabeledDataset load_test_set(const ExperimentConfig& cfg) {
  if (cfg.test_images.empty() || cfg.test_labels.empty())
    throw ConfigError("[dataset] test_images and test_labels are required for this command");
  return load_idx(cfg.test_images, cfg.test_labels);
}

json point_json(const SweepPoint& pt) {
  return json{{"accuracy", pt.accuracy},
              {"mean_param_use", pt.mean_param_use},
              {"mean_distribution", pt.mean_distribution}};
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    if (ctx) EVP_MD_CTX_free(ctx);
    throw UsageError("sha256 digest computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

ExperimentConfig resolve_config(const CliOptions& opt) {
  ExperimentConfig cfg = ExperimentConfig::load(opt.config_path);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  if (cfg.out_dir.empty())
    throw ConfigError("no output directory: set [output] dir in the config or pass --out");
  if (opt.seed >= 0) {
    const uint64_t s = static_cast<uint64_t>(opt.seed);
    cfg.train.seed = s;
    cfg.eval_seed = s;
    cfg.synthesis_seed = s;
    cfg.ablate_seeds = {s};
  }
  if (opt.workers > 0) cfg.train.workers = opt.workers;
  cfg.train.validate();
  return cfg;
}

void cmd_gen_data(const ExperimentConfig& cfg) {
  const std::vector<std::pair<std::string, std::string>> sources = {
      {"source_images", cfg.source_images},
      {"source_labels", cfg.source_labels},
      {"source_test_images", cfg.source_test_images},
      {"source_test_labels", cfg.source_test_labels}};
  for (const auto& [key, path] : sources) {
    if (path.empty())
      throw ConfigError("gen-data requires the [dataset] key '" + key + "'");
    if (!fs::exists(path))
      throw DataError(
          "missing MNIST source file: " + path +
          "\nDownload the four MNIST IDX files (train-images-idx3-ubyte.gz, "
          "train-labels-idx1-ubyte.gz, t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz) "
          "from an MNIST mirror and point the [dataset] source_* keys at them; gzipped or "
          "plain IDX files both work.");
  }
  if (cfg.train_images.empty() || cfg.train_labels.empty() || cfg.test_images.empty() ||
      cfg.test_labels.empty())
    throw ConfigError("gen-data requires [dataset] train_*/test_* output paths");

  const LabeledDataset src_train = load_idx(cfg.source_images, cfg.source_labels);
  const LabeledDataset src_test = load_idx(cfg.source_test_images, cfg.source_test_labels);
  // The test split draws its placement coins from an independent stream.
  const LabeledDataset wide_train = make_wide_mnist(src_train, cfg.synthesis_seed);
  const LabeledDataset wide_test = make_wide_mnist(src_test, cfg.synthesis_seed + 1);

  for (const std::string& p : {cfg.train_images, cfg.train_labels, cfg.test_images,
                               cfg.test_labels}) {
    const fs::path parent = fs::path(p).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
  }
  save_idx(wide_train, cfg.train_images, cfg.train_labels);
  save_idx(wide_test, cfg.test_images, cfg.test_labels);

  json prov;
  prov["synthesis_seed"] = cfg.synthesis_seed;
  prov["test_synthesis_seed"] = cfg.synthesis_seed + 1;
  for (const auto& [key, path] : sources) prov["sources"][path] = sha256_hex_file(path);
  for (const std::string& p : {cfg.train_images, cfg.train_labels, cfg.test_images,
                               cfg.test_labels})
    prov["outputs"][p] = sha256_hex_file(p);
  write_config_copy(cfg);
  write_file(out_path(cfg, "provenance.json"), prov.dump(2) + "\n");
}

void cmd_train(const ExperimentConfig& cfg) {
  if (!cfg.has_model) throw ConfigError("train requires a [model] section");
  const LabeledDataset train_set = load_train_set(cfg);
  write_config_copy(cfg);

  ComposerModel model(cfg.model, cfg.train.seed);
  const std::string ck_path = out_path(cfg, "checkpoint.bin");
  const std::string log_path = out_path(cfg, "train_log.jsonl");

  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw DataError("cannot open run log for writing: " + log_path);
  const ReportSink sink = [&log](const StepReport& r) {
    const json j{{"step", r.step},
                 {"reward", r.mean_reward},
                 {"loglik", r.mean_loglik},
                 {"costs", r.mean_costs},
                 {"gamma", r.gammas},
                 {"batch_accuracy", r.batch_accuracy}};
    log << j.dump() << "\n";
  };

  // Optional held-out probe at the eval cadence, logged separately so the run
  // log keeps exactly one line per step.
  EvalHook hook = nullptr;
  std::ofstream eval_log;
  LabeledDataset test_set;
  if (cfg.train.eval_cadence > 0 && !cfg.test_images.empty()) {
    test_set = load_test_set(cfg);
    eval_log.open(out_path(cfg, "eval_log.jsonl"), std::ios::binary | std::ios::trunc);
    const std::vector<double> zeros(static_cast<size_t>(cfg.model.controller.gamma_inputs), 0.0);
    hook = [&eval_log, &test_set, zeros](int step, ComposerModel& m) {
      Rng rng(0);  // expectation mode draws nothing
      const SweepPoint pt = evaluate(m, test_set, zeros, EvalMode::kExpectationMode, rng);
      eval_log << json{{"step", step}, {"test_accuracy", pt.accuracy}}.dump() << "\n";
    };
  }

  try {
    train_loop(model, train_set, cfg.train, sink, hook);
  } catch (const DivergenceError&) {
    log.flush();
    model.save(ck_path);  // parameters as of the last completed step
    throw;
  }
  model.save(ck_path);
}

void cmd_sweep(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  ComposerModel model = ComposerModel::load(checkpoint_path);
  const LabeledDataset test_set = load_test_set(cfg);
  const std::string hash = sha256_hex_file(checkpoint_path);

  const std::vector<double> gg_list = cfg.gamma_g.empty() ? std::vector<double>{0.0} : cfg.gamma_g;
  const std::vector<double> ge_list = cfg.gamma_e.empty() ? std::vector<double>{0.0} : cfg.gamma_e;
  std::vector<std::vector<double>> gamma_vectors;
  std::vector<std::pair<double, double>> columns;
  for (double gg : gg_list)
    for (double ge : ge_list) {
      gamma_vectors.push_back(controller_gammas(model.config(), cfg.train.prefs,
                                                strengths_for(cfg.train.prefs, gg, ge)));
      columns.emplace_back(gg, ge);
    }

  const std::vector<SweepPoint> points =
      preference_sweep(model, test_set, gamma_vectors, cfg.eval_seed);
  std::vector<SweepCsvRow> rows;
  rows.reserve(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    SweepCsvRow row;
    row.gamma_g = columns[i / 2].first;
    row.gamma_e = columns[i / 2].second;
    row.accuracy = points[i].accuracy;
    row.mean_param_use = points[i].mean_param_use;
    row.mode = eval_mode_name(points[i].mode);
    row.seed = cfg.eval_seed;
    rows.push_back(row);
  }
  write_config_copy(cfg);
  write_file(out_path(cfg, "sweep.csv"), sweep_csv(rows, hash));

  if (!cfg.rho.empty()) {
    const std::vector<SweepPoint> base =
        random_mixing_baseline(model, test_set, cfg.rho, cfg.eval_seed);
    std::string csv = "rho,accuracy,mean_param_use,seed,checkpoint\n";
    for (size_t i = 0; i < base.size(); ++i) {
      char buf[192];
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%llu,%s\n", cfg.rho[i],
                    base[i].accuracy, base[i].mean_param_use,
                    static_cast<unsigned long long>(cfg.eval_seed), hash.c_str());
      csv += buf;
    }
    write_file(out_path(cfg, "baseline.csv"), csv);
  }
}

void cmd_heatmap(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  ComposerModel model = ComposerModel::load(checkpoint_path);
  const LabeledDataset test_set = load_test_set(cfg);
  const std::vector<double> gv =
      controller_gammas(model.config(), cfg.train.prefs,
                        strengths_for(cfg.train.prefs, cfg.heatmap_gamma_g, cfg.heatmap_gamma_e));

  write_config_copy(cfg);
  const int n_meta = model.config().num_metalayers();
  for (int i = 0; i < n_meta; ++i) {
    const Heatmap h = module_class_heatmap(model, test_set, gv, i);
    char name[32];
    std::snprintf(name, sizeof(name), "heatmap_m%02d.csv", i);
    write_file(out_path(cfg, name), heatmap_csv(h));
  }
  const json meta{{"gamma_g", cfg.heatmap_gamma_g},
                  {"gamma_e", cfg.heatmap_gamma_e},
                  {"gamma", gv},
                  {"metalayers", n_meta},
                  {"checkpoint", sha256_hex_file(checkpoint_path)}};
  write_file(out_path(cfg, "heatmap_meta.json"), meta.dump(2) + "\n");
}

void cmd_ablate_entropy(const ExperimentConfig& cfg) {
  if (!cfg.has_model) throw ConfigError("ablate-entropy requires a [model] section");
  if (cfg.ablate_seeds.empty())
    throw ConfigError("ablate-entropy requires [ablate] seeds");
  const LabeledDataset train_set = load_train_set(cfg);
  const LabeledDataset test_set = load_test_set(cfg);
  const int steps = cfg.ablate_steps > 0 ? cfg.ablate_steps : cfg.train.steps;

  json runs = json::array();
  json diffs = json::array();
  for (uint64_t seed : cfg.ablate_seeds) {
    double mi_of_kind[2] = {0.0, 0.0};
    const CostKind kinds[2] = {CostKind::kBatchEntropy, CostKind::kPerExampleEntropy};
    for (int ki = 0; ki < 2; ++ki) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      tc.steps = steps;
      PreferenceSpec spec;
      spec.kind = kinds[ki];
      spec.gamma = {GammaKind::kConstant, cfg.ablate_gamma_e, 0.0, 0.0};
      tc.prefs = {spec};

      ComposerModel model(cfg.model, seed);
      train_loop(model, train_set, tc, [](const StepReport&) {});

      const std::vector<double> gv =
          controller_gammas(cfg.model, tc.prefs, {cfg.ablate_gamma_e});
      EvalTrace trace;
      Rng rng = Rng::keyed(seed, {kTagEval, static_cast<uint64_t>(ki)});
      const SweepPoint pt = evaluate(model, test_set, gv, EvalMode::kSampleMode, rng, &trace);

      mi_of_kind[ki] = mutual_information(trace.choices[0], trace.labels);
      std::vector<int> counts(cfg.model.metalayers[0].modules.size(), 0);
      for (int c : trace.choices[0]) ++counts[c];
      int max_count = 0;
      for (int c : counts) max_count = std::max(max_count, c);
      runs.push_back(json{{"seed", seed},
                          {"cost", cost_kind_name(kinds[ki])},
                          {"mi", mi_of_kind[ki]},
                          {"max_selection_frequency",
                           static_cast<double>(max_count) / static_cast<double>(test_set.count)},
                          {"accuracy", pt.accuracy}});
    }
    diffs.push_back(json{{"seed", seed},
                         {"mi_batch_minus_per_example", mi_of_kind[0] - mi_of_kind[1]}});
  }

  json report;
  report["gamma_e"] = cfg.ablate_gamma_e;
  report["steps"] = steps;
  report["seeds"] = cfg.ablate_seeds;
  report["runs"] = runs;
  report["differences"] = diffs;
  report["config"] = cfg.canonical_text();
  write_config_copy(cfg);
  write_file(out_path(cfg, "ablation.json"), report.dump(2) + "\n");
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  ComposerModel model = ComposerModel::load(checkpoint_path);
  const LabeledDataset test_set = load_test_set(cfg);
  const std::vector<double> gv =
      controller_gammas(model.config(), cfg.train.prefs,
                        strengths_for(cfg.train.prefs, cfg.eval_gamma_g, cfg.eval_gamma_e));

  Rng sample_rng = Rng::keyed(cfg.eval_seed, {kTagEval, 0});
  const SweepPoint sp = evaluate(model, test_set, gv, EvalMode::kSampleMode, sample_rng);
  Rng expect_rng = Rng::keyed(cfg.eval_seed, {kTagEval, 1});
  const SweepPoint ep = evaluate(model, test_set, gv, EvalMode::kExpectationMode, expect_rng);

  json report;
  report["gamma_g"] = cfg.eval_gamma_g;
  report["gamma_e"] = cfg.eval_gamma_e;
  report["gamma"] = gv;
  report["eval_seed"] = cfg.eval_seed;
  report["checkpoint"] = sha256_hex_file(checkpoint_path);
  report["sample"] = point_json(sp);
  report["expectation"] = point_json(ep);
  write_config_copy(cfg);
  write_file(out_path(cfg, "eval.json"), report.dump(2) + "\n");
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Modular-routing experiment runner"};
  app.require_subcommand(1);

  CliOptions opt;
  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "experiment config file")->required();
    sub->add_option("--checkpoint", opt.checkpoint,
                    "checkpoint path (default: <out>/checkpoint.bin)");
    sub->add_option("--out", opt.out_dir, "output directory (overrides [output] dir)");
    sub->add_option("--seed", opt.seed, "override every configured seed");
    sub->add_option("--workers", opt.workers, "override [train] workers");
    return sub;
  };
  CLI::App* gen = add_common(app.add_subcommand("gen-data", "synthesize the wide-digit dataset"));
  CLI::App* train = add_common(app.add_subcommand("train", "train a model from the config"));
  CLI::App* sweep =
      add_common(app.add_subcommand("sweep", "trade-off sweep + mixing baseline on a checkpoint"));
  CLI::App* heatmap =
      add_common(app.add_subcommand("heatmap", "per-class routing heatmaps for a checkpoint"));
  CLI::App* ablate = add_common(
      app.add_subcommand("ablate-entropy", "paired batch/per-example entropy trainings + MI"));
  CLI::App* eval_cmd = add_common(app.add_subcommand("eval", "single evaluation of a checkpoint"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const ExperimentConfig cfg = resolve_config(opt);
    const std::string ck =
        opt.checkpoint.empty() ? out_path(cfg, "checkpoint.bin") : opt.checkpoint;
    if (gen->parsed()) cmd_gen_data(cfg);
    else if (train->parsed()) cmd_train(cfg);
    else if (sweep->parsed()) cmd_sweep(cfg, ck);
    else if (heatmap->parsed()) cmd_heatmap(cfg, ck);
    else if (ablate->parsed()) cmd_ablate_entropy(cfg);
    else if (eval_cmd->parsed()) cmd_eval(cfg, ck);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace composer
