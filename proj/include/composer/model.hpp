#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "composer/autodiff.hpp"
#include "composer/rng.hpp"
#include "composer/tensor.hpp"

namespace composer {

// ---- static configuration ---------------------------------------------------

enum class GlimpseKind { kActivations, kFull, kRect };

struct Glimpse {
  GlimpseKind kind = GlimpseKind::kActivations;
  int row0 = 0, col0 = 0, rows = 0, cols = 0;  // used when kind == kRect
};

/// One candidate module inside a metalayer. Either a ReLU MLP (hidden sizes +
/// linear output) or a parameter-free identity passthrough.
struct ModuleSpec {
  Glimpse glimpse;
  bool identity = false;
  std::vector<int> hidden;  // hidden layer widths (empty = single affine)
  int output = 0;           // ignored for identity (output == input width)
};

struct MetalayerSpec {
  std::vector<ModuleSpec> modules;
};

struct ControllerConfig {
  int hidden_size = 32;
  // Activations whose size equals the raw input are average-pooled to this
  // grid before entering the controller; anything else is consumed as-is.
  int pool_rows = 7;
  int pool_cols = 14;
  int gamma_inputs = 0;  // number of preference-strength slots fed to the cell
};

struct ComposerConfig {
  int input_rows = 0;
  int input_cols = 0;
  int num_classes = 0;
  std::vector<int> stem;  // hidden widths of the stem MLP; empty = identity stem
  std::vector<MetalayerSpec> metalayers;
  ControllerConfig controller;

  void validate() const;
  std::string canonical_text() const;
  static ComposerConfig parse_text(const std::string& text);

  int input_size() const { return input_rows * input_cols; }
  int num_metalayers() const { return static_cast<int>(metalayers.size()); }
  /// Width of the data entering metalayer i (stem output for i=0, else the
  /// previous metalayer's output).
  int activation_width(int metalayer) const;
  int module_input_width(int metalayer, int module) const;
  int module_output_width(int metalayer, int module) const;
  int max_modules() const;
  /// Controller feature width: max over metalayers of the featurized
  /// (pooled-or-raw) incoming activation width.
  int feature_width() const;
  int cell_input_width() const;
};

// ---- runtime types ----------------------------------------------------------

enum class RouteMode { kSample, kArgmax };

/// One example's routing record: the choices, the routing distributions that
/// produced them, and the log-probability of the chosen path.
struct Trajectory {
  std::vector<int> choices;
  std::vector<std::vector<double>> distributions;
  double path_log_prob = 0.0;
  std::vector<double> gamma_used;
};

/// Draw from a probability vector: sample mode uses one uniform variate via
/// inverse CDF in index order; argmax returns the lowest maximizing index.
int sample_choice(const std::vector<double>& p, RouteMode mode, Rng* rng);

/// Nodes of one example's taped forward pass, for gradient construction.
struct ExampleRun {
  ValueId logits = -1;         // [num_classes]
  ValueId path_log_prob = -1;  // [1], sum over metalayers of ln p_i[c_i]
  std::vector<ValueId> dist_nodes;  // p_i, one per metalayer
  Trajectory traj;
};

class ComposerModel {
public:
  ComposerModel(ComposerConfig cfg, uint64_t init_seed);

  const ComposerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Taped single-example forward pass over the full stem → route → logits
  /// pipeline. `gamma` must have exactly controller.gamma_inputs entries.
  /// `forced` pins the route (distributions still computed and recorded); no
  /// rng is consumed when the route is forced or mode is argmax.
  ExampleRun run_example(Tape& t, const Tensor& x_flat, const std::vector<double>& gamma,
                         RouteMode mode, Rng* rng,
                         const std::vector<int>* forced = nullptr);

  /// Batched value-only convenience wrapper: one row of logits per example.
  std::pair<Tensor, std::vector<Trajectory>> compose_forward(const Tensor& x_batch,
                                                             const std::vector<double>& gamma,
                                                             RouteMode mode, Rng& rng);

  /// Exact scalar-parameter count of module (i,j) — the raw β value.
  int64_t module_param_count(int metalayer, int module) const;
  /// β table: beta[i][j] = raw parameter count of module j in metalayer i.
  std::vector<std::vector<int64_t>> beta_table() const;

  void save(const std::string& path) const;
  static ComposerModel load(const std::string& path);

private:
  void init_params(uint64_t seed);
  /// Featurize an activation for the controller: pool if image-sized, then
  /// zero-pad to the fixed feature width.
  ValueId featurize(Tape& t, ValueId a) const;
  ValueId module_forward(Tape& t, int metalayer, int module, ValueId a_prev,
                         const Tensor& x_flat);
  ValueId mlp_forward(Tape& t, ValueId in, const std::string& prefix, int n_layers);

  ComposerConfig cfg_;
  ParamStore params_;
};

/// Deterministic 64-bit FNV-1a, used to key per-parameter init streams.
uint64_t fnv1a64(const std::string& s);

}  // namespace composer
