#include "composer/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "composer/errors.hpp"

namespace composer {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string pad2(int v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", v);
  return buf;
}

std::string stem_id(int layer, const char* which) {
  return "stem.l" + pad2(layer) + "." + which;
}
std::string module_id(int metalayer, int module, int layer, const char* which) {
  return "m" + pad2(metalayer) + "." + pad2(module) + ".l" + pad2(layer) + "." + which;
}
std::string head_id(int metalayer, const char* which) {
  return "ctrl.head" + pad2(metalayer) + "." + which;
}

}  // namespace

// ---- ComposerConfig ----------------------------------------------------------

int ComposerConfig::activation_width(int metalayer) const {
  if (metalayer == 0) return stem.empty() ? input_size() : stem.back();
  return module_output_width(metalayer - 1, 0);
}

int ComposerConfig::module_input_width(int metalayer, int module) const {
  const ModuleSpec& m = metalayers[metalayer].modules[module];
  switch (m.glimpse.kind) {
    case GlimpseKind::kFull:
      return input_size();
    case GlimpseKind::kRect:
      return m.glimpse.rows * m.glimpse.cols;
    case GlimpseKind::kActivations:
    default:
      return activation_width(metalayer);
  }
}

int ComposerConfig::module_output_width(int metalayer, int module) const {
  const ModuleSpec& m = metalayers[metalayer].modules[module];
  return m.identity ? module_input_width(metalayer, module) : m.output;
}

int ComposerConfig::max_modules() const {
  int mx = 0;
  for (const auto& ml : metalayers) mx = std::max(mx, static_cast<int>(ml.modules.size()));
  return mx;
}

int ComposerConfig::feature_width() const {
  int mx = 0;
  for (int i = 0; i < num_metalayers(); ++i) {
    int w = activation_width(i);
    if (w == input_size()) w = controller.pool_rows * controller.pool_cols;
    mx = std::max(mx, w);
  }
  return mx;
}

int ComposerConfig::cell_input_width() const {
  return feature_width() + max_modules() + controller.gamma_inputs + controller.hidden_size;
}

void ComposerConfig::validate() const {
  if (input_rows < 1 || input_cols < 1) throw ConfigError("input shape must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (metalayers.empty()) throw ConfigError("at least one metalayer is required");
  for (int w : stem)
    if (w < 1) throw ConfigError("stem widths must be positive");
  if (controller.hidden_size < 1) throw ConfigError("controller hidden size must be positive");
  if (controller.pool_rows < 1 || controller.pool_cols < 1)
    throw ConfigError("controller pool shape must be positive");
  if (controller.gamma_inputs < 0) throw ConfigError("gamma input count must be non-negative");

  for (int i = 0; i < num_metalayers(); ++i) {
    const auto& ml = metalayers[i];
    if (ml.modules.empty())
      throw ConfigError("metalayer " + std::to_string(i + 1) + " has no modules");
    for (int j = 0; j < static_cast<int>(ml.modules.size()); ++j) {
      const ModuleSpec& m = ml.modules[j];
      const std::string where =
          "module " + std::to_string(j + 1) + " of metalayer " + std::to_string(i + 1);
      if (m.glimpse.kind != GlimpseKind::kActivations && i != 0)
        throw ConfigError(where + ": raw-input glimpses are only allowed in metalayer 1");
      if (m.glimpse.kind == GlimpseKind::kRect) {
        const Glimpse& g = m.glimpse;
        if (g.rows < 1 || g.cols < 1 || g.row0 < 0 || g.col0 < 0 ||
            g.row0 + g.rows > input_rows || g.col0 + g.cols > input_cols)
          throw ConfigError(where + ": glimpse rectangle out of input bounds");
      }
      if (m.identity) {
        if (!m.hidden.empty()) throw ConfigError(where + ": identity modules take no layers");
      } else {
        if (m.output < 1) throw ConfigError(where + ": output size must be positive");
        for (int w : m.hidden)
          if (w < 1) throw ConfigError(where + ": hidden widths must be positive");
      }
    }
    const int out0 = module_output_width(i, 0);
    for (int j = 1; j < static_cast<int>(ml.modules.size()); ++j)
      if (module_output_width(i, j) != out0)
        throw ConfigError("metalayer " + std::to_string(i + 1) +
                          ": modules disagree on output size");
  }
  if (module_output_width(num_metalayers() - 1, 0) != num_classes)
    throw ConfigError("last metalayer output size must equal num_classes");

  // Pooling applies whenever an activation is exactly input-sized.
  for (int i = 0; i < num_metalayers(); ++i) {
    if (activation_width(i) == input_size() &&
        (input_rows % controller.pool_rows != 0 || input_cols % controller.pool_cols != 0))
      throw ConfigError("controller pool shape must evenly divide the input shape");
  }
}

std::string ComposerConfig::canonical_text() const {
  std::ostringstream out;
  out << "composer-config v1\n";
  out << "input " << input_rows << " " << input_cols << "\n";
  out << "classes " << num_classes << "\n";
  if (stem.empty()) {
    out << "stem identity\n";
  } else {
    out << "stem mlp";
    for (int w : stem) out << " " << w;
    out << "\n";
  }
  out << "controller hidden " << controller.hidden_size << " pool " << controller.pool_rows
      << " " << controller.pool_cols << " gammas " << controller.gamma_inputs << "\n";
  for (const auto& ml : metalayers) {
    out << "metalayer\n";
    for (const ModuleSpec& m : ml.modules) {
      out << "module ";
      switch (m.glimpse.kind) {
        case GlimpseKind::kActivations:
          out << "activations";
          break;
        case GlimpseKind::kFull:
          out << "full";
          break;
        case GlimpseKind::kRect:
          out << "rect " << m.glimpse.row0 << " " << m.glimpse.col0 << " " << m.glimpse.rows
              << " " << m.glimpse.cols;
          break;
      }
      if (m.identity) {
        out << " identity";
      } else {
        out << " mlp";
        for (int w : m.hidden) out << " " << w;
        out << " out " << m.output;
      }
      out << "\n";
    }
  }
  return out.str();
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> toks;
  std::string t;
  while (in >> t) toks.push_back(t);
  return toks;
}

int parse_int(const std::string& tok, const std::string& what) {
  try {
    size_t pos = 0;
    int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected an integer for " + what + ", got '" + tok + "'");
  }
}

}  // namespace

ComposerConfig ComposerConfig::parse_text(const std::string& text) {
  ComposerConfig cfg;
  std::istringstream in(text);
  std::string line;
  bool saw_header = false, saw_input = false, saw_classes = false, saw_stem = false,
       saw_controller = false;
  while (std::getline(in, line)) {
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    const std::string& key = toks[0];
    if (!saw_header) {
      if (key != "composer-config" || toks.size() != 2 || toks[1] != "v1")
        throw ConfigError("model config must start with 'composer-config v1'");
      saw_header = true;
    } else if (key == "input") {
      if (toks.size() != 3) throw ConfigError("input line needs rows and cols");
      cfg.input_rows = parse_int(toks[1], "input rows");
      cfg.input_cols = parse_int(toks[2], "input cols");
      saw_input = true;
    } else if (key == "classes") {
      if (toks.size() != 2) throw ConfigError("classes line needs one value");
      cfg.num_classes = parse_int(toks[1], "classes");
      saw_classes = true;
    } else if (key == "stem") {
      if (toks.size() >= 2 && toks[1] == "identity") {
        if (toks.size() != 2) throw ConfigError("stem identity takes no sizes");
      } else if (toks.size() >= 2 && toks[1] == "mlp") {
        for (size_t k = 2; k < toks.size(); ++k)
          cfg.stem.push_back(parse_int(toks[k], "stem width"));
        if (cfg.stem.empty()) throw ConfigError("stem mlp needs at least one width");
      } else {
        throw ConfigError("stem must be 'identity' or 'mlp <widths...>'");
      }
      saw_stem = true;
    } else if (key == "controller") {
      if (toks.size() != 8 || toks[1] != "hidden" || toks[3] != "pool" || toks[6] != "gammas")
        throw ConfigError("controller line must be 'controller hidden H pool R C gammas G'");
      cfg.controller.hidden_size = parse_int(toks[2], "controller hidden");
      cfg.controller.pool_rows = parse_int(toks[4], "controller pool rows");
      cfg.controller.pool_cols = parse_int(toks[5], "controller pool cols");
      cfg.controller.gamma_inputs = parse_int(toks[7], "controller gammas");
      saw_controller = true;
    } else if (key == "metalayer") {
      if (toks.size() != 1) throw ConfigError("metalayer line takes no arguments");
      cfg.metalayers.emplace_back();
    } else if (key == "module") {
      if (cfg.metalayers.empty()) throw ConfigError("module line before any metalayer");
      ModuleSpec m;
      size_t pos = 1;
      if (pos >= toks.size()) throw ConfigError("module line needs a glimpse kind");
      if (toks[pos] == "activations") {
        m.glimpse.kind = GlimpseKind::kActivations;
        ++pos;
      } else if (toks[pos] == "full") {
        m.glimpse.kind = GlimpseKind::kFull;
        ++pos;
      } else if (toks[pos] == "rect") {
        if (pos + 4 >= toks.size()) throw ConfigError("rect glimpse needs 4 integers");
        m.glimpse.kind = GlimpseKind::kRect;
        m.glimpse.row0 = parse_int(toks[pos + 1], "glimpse row0");
        m.glimpse.col0 = parse_int(toks[pos + 2], "glimpse col0");
        m.glimpse.rows = parse_int(toks[pos + 3], "glimpse rows");
        m.glimpse.cols = parse_int(toks[pos + 4], "glimpse cols");
        pos += 5;
      } else {
        throw ConfigError("unknown glimpse kind '" + toks[pos] + "'");
      }
      if (pos >= toks.size()) throw ConfigError("module line needs an architecture");
      if (toks[pos] == "identity") {
        if (pos + 1 != toks.size()) throw ConfigError("identity module takes no sizes");
        m.identity = true;
      } else if (toks[pos] == "mlp") {
        ++pos;
        std::vector<int> widths;
        while (pos < toks.size() && toks[pos] != "out")
          widths.push_back(parse_int(toks[pos++], "module width"));
        if (pos + 2 != toks.size() || toks[pos] != "out")
          throw ConfigError("module mlp must end with 'out <size>'");
        m.hidden = std::move(widths);
        m.output = parse_int(toks[pos + 1], "module output size");
      } else {
        throw ConfigError("module architecture must be 'identity' or 'mlp ... out K'");
      }
      cfg.metalayers.back().modules.push_back(std::move(m));
    } else {
      throw ConfigError("unknown model config line '" + key + "'");
    }
  }
  if (!saw_header || !saw_input || !saw_classes || !saw_stem || !saw_controller)
    throw ConfigError("model config is missing a required section");
  cfg.validate();
  return cfg;
}

// ---- routing ------------------------------------------------------------------

int sample_choice(const std::vector<double>& p, RouteMode mode, Rng* rng) {
  if (p.empty()) throw UsageError("sample_choice: empty distribution");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw UsageError("sample_choice: negative or NaN probability");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > 1e-6)
    throw UsageError("sample_choice: distribution sums to " + std::to_string(sum));
  if (mode == RouteMode::kArgmax) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i)
      if (p[i] > p[best]) best = i;  // strict: ties keep the lowest index
    return best;
  }
  if (!rng) throw UsageError("sample_choice: sample mode requires an rng");
  const double u = rng->next_double();
  double cum = 0.0;
  for (int i = 0; i + 1 < static_cast<int>(p.size()); ++i) {
    cum += p[i];
    if (u < cum) return i;
  }
  return static_cast<int>(p.size()) - 1;
}

// ---- ComposerModel -------------------------------------------------------------

ComposerModel::ComposerModel(ComposerConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params(init_seed);
}

namespace {

Tensor init_weight(uint64_t seed, const std::string& id, int fan_in, int fan_out) {
  Rng r = Rng::keyed(seed, {kTagModelInit, fnv1a64(id)});
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& v : w.data) v = r.uniform(-s, s);
  return w;
}

}  // namespace

void ComposerModel::init_params(uint64_t seed) {
  // Stem.
  int in = cfg_.input_size();
  for (size_t k = 0; k < cfg_.stem.size(); ++k) {
    const int out = cfg_.stem[k];
    const std::string wid = stem_id(static_cast<int>(k), "W");
    params_.create(wid, init_weight(seed, wid, in, out));
    params_.create(stem_id(static_cast<int>(k), "b"), Tensor::zeros({out}));
    in = out;
  }
  // Modules.
  for (int i = 0; i < cfg_.num_metalayers(); ++i) {
    for (int j = 0; j < static_cast<int>(cfg_.metalayers[i].modules.size()); ++j) {
      const ModuleSpec& m = cfg_.metalayers[i].modules[j];
      if (m.identity) continue;
      int w = cfg_.module_input_width(i, j);
      std::vector<int> widths = m.hidden;
      widths.push_back(m.output);
      for (size_t k = 0; k < widths.size(); ++k) {
        const std::string wid = module_id(i, j, static_cast<int>(k), "W");
        params_.create(wid, init_weight(seed, wid, w, widths[k]));
        params_.create(module_id(i, j, static_cast<int>(k), "b"), Tensor::zeros({widths[k]}));
        w = widths[k];
      }
    }
  }
  // Controller cell.
  const int cin = cfg_.cell_input_width();
  const int h = cfg_.controller.hidden_size;
  params_.create("ctrl.cell.W", init_weight(seed, "ctrl.cell.W", cin, h));
  params_.create("ctrl.cell.b", Tensor::zeros({h}));
  // Output heads start at zero so initial routing is exactly uniform.
  for (int i = 0; i < cfg_.num_metalayers(); ++i) {
    const int m = static_cast<int>(cfg_.metalayers[i].modules.size());
    params_.create(head_id(i, "W"), Tensor::zeros({h, m}));
    params_.create(head_id(i, "b"), Tensor::zeros({m}));
  }
}

ValueId ComposerModel::featurize(Tape& t, ValueId a) const {
  const int w = t.value(a).shape[0];
  ValueId feat = a;
  if (w == cfg_.input_size())
    feat = avg_pool2d(t, a, cfg_.input_rows, cfg_.input_cols, cfg_.controller.pool_rows,
                      cfg_.controller.pool_cols);
  return pad_to(t, feat, cfg_.feature_width());
}

ValueId ComposerModel::mlp_forward(Tape& t, ValueId in, const std::string& prefix,
                                   int n_layers) {
  ValueId a = in;
  for (int k = 0; k < n_layers; ++k) {
    a = affine(t, a, t.param(params_, prefix + ".l" + pad2(k) + ".W"),
               t.param(params_, prefix + ".l" + pad2(k) + ".b"));
    if (k + 1 < n_layers) a = relu(t, a);
  }
  return a;
}

ValueId ComposerModel::module_forward(Tape& t, int metalayer, int module, ValueId a_prev,
                                      const Tensor& x_flat) {
  const ModuleSpec& m = cfg_.metalayers[metalayer].modules[module];
  ValueId in = a_prev;
  if (m.glimpse.kind == GlimpseKind::kFull) {
    in = t.constant(x_flat);
  } else if (m.glimpse.kind == GlimpseKind::kRect) {
    const Glimpse& g = m.glimpse;
    Tensor crop = Tensor::zeros({g.rows * g.cols});
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c)
        crop.data[static_cast<size_t>(r) * g.cols + c] =
            x_flat.data[static_cast<size_t>(g.row0 + r) * cfg_.input_cols + (g.col0 + c)];
    in = t.constant(std::move(crop));
  }
  if (m.identity) return in;
  return mlp_forward(t, in, "m" + pad2(metalayer) + "." + pad2(module),
                     static_cast<int>(m.hidden.size()) + 1);
}

ExampleRun ComposerModel::run_example(Tape& t, const Tensor& x_flat,
                                      const std::vector<double>& gamma, RouteMode mode,
                                      Rng* rng, const std::vector<int>* forced) {
  if (x_flat.ndim() != 1 || x_flat.shape[0] != cfg_.input_size())
    throw DataError("input of size " + shape_string(x_flat.shape) +
                    " does not match configured input " + std::to_string(cfg_.input_size()));
  if (static_cast<int>(gamma.size()) != cfg_.controller.gamma_inputs)
    throw UsageError("gamma vector must have exactly " +
                     std::to_string(cfg_.controller.gamma_inputs) + " entries");
  const int n = cfg_.num_metalayers();
  if (forced && static_cast<int>(forced->size()) != n)
    throw UsageError("forced route must choose one module per metalayer");
  if (mode == RouteMode::kSample && !forced && !rng)
    throw UsageError("sample mode requires an rng");

  ExampleRun run;
  run.traj.gamma_used = gamma;

  // Stem (Eq. 1).
  ValueId a = t.constant(x_flat);
  if (!cfg_.stem.empty()) {
    ValueId s = a;
    for (size_t k = 0; k < cfg_.stem.size(); ++k)
      s = relu(t, affine(t, s, t.param(params_, stem_id(static_cast<int>(k), "W")),
                         t.param(params_, stem_id(static_cast<int>(k), "b"))));
    a = s;
  }

  ValueId hidden = t.constant(Tensor::zeros({cfg_.controller.hidden_size}));
  int prev_choice = -1;
  ValueId plp = -1;
  for (int i = 0; i < n; ++i) {
    const int m_i = static_cast<int>(cfg_.metalayers[i].modules.size());
    // Controller step (Eq. 2): a shared tanh cell over featurized activations,
    // the previous choice's one-hot, the preference vector, and its own state.
    ValueId feat = featurize(t, a);
    Tensor onehot = Tensor::zeros({cfg_.max_modules()});
    if (prev_choice >= 0) onehot.data[prev_choice] = 1.0;
    std::vector<ValueId> parts{feat, t.constant(std::move(onehot))};
    if (cfg_.controller.gamma_inputs > 0) parts.push_back(t.constant(Tensor::row(gamma)));
    parts.push_back(hidden);
    hidden = tanh_op(t, affine(t, concat(t, parts), t.param(params_, "ctrl.cell.W"),
                               t.param(params_, "ctrl.cell.b")));
    ValueId logits_i = affine(t, hidden, t.param(params_, head_id(i, "W")),
                              t.param(params_, head_id(i, "b")));
    ValueId p_node = softmax(t, logits_i);

    const Tensor& pv = t.value(p_node);
    std::vector<double> pvec(pv.data.begin(), pv.data.end());
    int choice;
    if (forced) {
      choice = (*forced)[i];
      if (choice < 0 || choice >= m_i) throw UsageError("forced route index out of range");
    } else {
      choice = sample_choice(pvec, mode, rng);
    }

    // Path log-probability (Eq. 3's density), accumulated in log space.
    ValueId lp = log_softmax_pick(t, logits_i, choice);
    plp = (plp < 0) ? lp : add(t, plp, lp);

    run.dist_nodes.push_back(p_node);
    run.traj.distributions.push_back(std::move(pvec));
    run.traj.choices.push_back(choice);
    prev_choice = choice;

    // Module application (Eq. 4).
    a = module_forward(t, i, choice, a, x_flat);
  }

  run.logits = a;
  run.path_log_prob = plp;
  run.traj.path_log_prob = t.value(plp).item();
  return run;
}

std::pair<Tensor, std::vector<Trajectory>> ComposerModel::compose_forward(
    const Tensor& x_batch, const std::vector<double>& gamma, RouteMode mode, Rng& rng) {
  if (x_batch.ndim() != 2)
    throw DataError("compose_forward expects a [batch, pixels] tensor, got " +
                    shape_string(x_batch.shape));
  const int n = x_batch.shape[0];
  const int w = x_batch.shape[1];
  Tensor logits = Tensor::zeros({n, cfg_.num_classes});
  std::vector<Trajectory> trajs;
  trajs.reserve(n);
  for (int e = 0; e < n; ++e) {
    Tensor row = Tensor::zeros({w});
    std::copy(x_batch.data.begin() + static_cast<size_t>(e) * w,
              x_batch.data.begin() + static_cast<size_t>(e + 1) * w, row.data.begin());
    Tape t;
    ExampleRun run = run_example(t, row, gamma, mode, &rng);
    const Tensor& lv = t.value(run.logits);
    std::copy(lv.data.begin(), lv.data.end(),
              logits.data.begin() + static_cast<size_t>(e) * cfg_.num_classes);
    trajs.push_back(std::move(run.traj));
  }
  return {std::move(logits), std::move(trajs)};
}

int64_t ComposerModel::module_param_count(int metalayer, int module) const {
  const ModuleSpec& m = cfg_.metalayers[metalayer].modules[module];
  if (m.identity) return 0;
  int64_t count = 0;
  int in = cfg_.module_input_width(metalayer, module);
  std::vector<int> widths = m.hidden;
  widths.push_back(m.output);
  for (int out : widths) {
    count += static_cast<int64_t>(in) * out + out;
    in = out;
  }
  return count;
}

std::vector<std::vector<int64_t>> ComposerModel::beta_table() const {
  std::vector<std::vector<int64_t>> beta(cfg_.num_metalayers());
  for (int i = 0; i < cfg_.num_metalayers(); ++i)
    for (int j = 0; j < static_cast<int>(cfg_.metalayers[i].modules.size()); ++j)
      beta[i].push_back(module_param_count(i, j));
  return beta;
}

// ---- checkpoint I/O ------------------------------------------------------------

namespace {

constexpr char kMagic[] = "CMPZ1";
constexpr size_t kMagicLen = 5;

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<uint64_t>(d)); }

struct Cursor {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void ComposerModel::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, kMagicLen);
  const std::string cfg_text = cfg_.canonical_text();
  put_u64(out, cfg_text.size());
  out += cfg_text;
  put_u64(out, params_.entries().size());
  for (const auto& [id, e] : params_.entries()) {
    put_u64(out, id.size());
    out += id;
    put_u64(out, e.value.shape.size());
    for (int d : e.value.shape) put_u64(out, static_cast<uint64_t>(d));
    for (double v : e.value.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path);
}

ComposerModel ComposerModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Cursor c{buf};
  if (c.bytes(kMagicLen, "magic") != std::string(kMagic, kMagicLen))
    throw DataError("bad checkpoint magic in " + path);
  const uint64_t cfg_len = c.u64("config length");
  ComposerConfig cfg = ComposerConfig::parse_text(c.bytes(cfg_len, "config text"));

  ComposerModel model(cfg, 0);
  const uint64_t n = c.u64("parameter count");
  if (n != model.params_.entries().size())
    throw DataError("checkpoint parameter count does not match its config");
  for (uint64_t k = 0; k < n; ++k) {
    const uint64_t id_len = c.u64("parameter id length");
    const std::string id = c.bytes(id_len, "parameter id");
    if (!model.params_.has(id)) throw DataError("checkpoint names unknown parameter " + id);
    ParamStore::Entry& e = model.params_.entry(id);
    const uint64_t ndim = c.u64("parameter rank");
    if (ndim != e.value.shape.size())
      throw DataError("checkpoint shape mismatch for parameter " + id);
    for (size_t d = 0; d < ndim; ++d)
      if (c.u64("parameter dim") != static_cast<uint64_t>(e.value.shape[d]))
        throw DataError("checkpoint shape mismatch for parameter " + id);
    for (double& v : e.value.data) v = c.f64("parameter data");
  }
  if (c.pos != buf.size()) throw DataError("trailing bytes after checkpoint payload");
  return model;
}

}  // namespace composer
