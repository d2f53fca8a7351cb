#include "composer/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "composer/errors.hpp"
#include "composer/preferences.hpp"

namespace composer {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> toks;
  std::string t;
  while (in >> t) toks.push_back(t);
  return toks;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& tok, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected a number for " + what + ", got '" + tok + "'");
  }
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

uint64_t parse_u64(const std::string& tok, const std::string& what) {
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(tok, &pos);
    if (pos != tok.size() || tok[0] == '-') throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected a non-negative integer for " + what + ", got '" + tok + "'");
  }
}

std::vector<double> parse_double_list(const std::vector<std::string>& toks,
                                      const std::string& what) {
  std::vector<double> out;
  for (size_t i = 1; i < toks.size(); ++i) out.push_back(parse_double(toks[i], what));
  return out;
}

const char* gamma_kind_name(GammaKind k) {
  switch (k) {
    case GammaKind::kConstant: return "constant";
    case GammaKind::kUniform: return "uniform";
    case GammaKind::kLogUniform: return "log_uniform";
  }
  return "constant";
}

PreferenceSpec parse_pref(const std::vector<std::string>& toks) {
  if (toks.size() < 4) throw ConfigError("pref line needs a cost kind, a distribution, and values");
  PreferenceSpec spec;
  spec.kind = cost_kind_from_name(toks[1]);
  size_t pos = 2;
  const std::string& dist = toks[pos++];
  if (dist == "constant") {
    spec.gamma.kind = GammaKind::kConstant;
    spec.gamma.lo = parse_double(toks[pos++], "pref constant value");
  } else if (dist == "uniform" || dist == "log_uniform") {
    spec.gamma.kind = dist == "uniform" ? GammaKind::kUniform : GammaKind::kLogUniform;
    if (pos + 1 >= toks.size()) throw ConfigError("pref " + dist + " needs lower and upper bounds");
    spec.gamma.lo = parse_double(toks[pos++], "pref lower bound");
    spec.gamma.hi = parse_double(toks[pos++], "pref upper bound");
  } else {
    throw ConfigError("unknown pref distribution '" + dist +
                      "' (expected constant, uniform, or log_uniform)");
  }
  if (pos < toks.size()) {
    if (toks[pos] != "zero_mass" || pos + 1 >= toks.size())
      throw ConfigError("trailing pref tokens must be 'zero_mass VALUE'");
    spec.gamma.zero_mass = parse_double(toks[pos + 1], "pref zero_mass");
    pos += 2;
  }
  if (pos != toks.size()) throw ConfigError("unexpected trailing tokens on pref line");
  spec.validate();
  return spec;
}

std::string serialize_pref(const PreferenceSpec& spec) {
  std::string out = std::string("pref ") + cost_kind_name(spec.kind) + " " +
                    gamma_kind_name(spec.gamma.kind) + " " + fmt(spec.gamma.lo);
  if (spec.gamma.kind != GammaKind::kConstant) out += " " + fmt(spec.gamma.hi);
  if (spec.gamma.zero_mass != 0.0) out += " zero_mass " + fmt(spec.gamma.zero_mass);
  return out;
}

/// The value part of a path-valued key: everything after the key token, so
/// paths may contain spaces.
std::string rest_after_key(const std::string& line, const std::string& key) {
  return trim(line.substr(key.size()));
}

const std::string& arg1(const std::vector<std::string>& toks) {
  if (toks.size() < 2) throw ConfigError("config key '" + toks[0] + "' needs a value");
  if (toks.size() > 2) throw ConfigError("config key '" + toks[0] + "' takes a single value");
  return toks[1];
}

}  // namespace

std::string ExperimentConfig::canonical_text() const {
  std::ostringstream out;
  out << "composer-experiment v1\n";

  out << "\n[dataset]\n";
  if (!train_images.empty()) out << "train_images " << train_images << "\n";
  if (!train_labels.empty()) out << "train_labels " << train_labels << "\n";
  if (!test_images.empty()) out << "test_images " << test_images << "\n";
  if (!test_labels.empty()) out << "test_labels " << test_labels << "\n";
  if (!source_images.empty()) out << "source_images " << source_images << "\n";
  if (!source_labels.empty()) out << "source_labels " << source_labels << "\n";
  if (!source_test_images.empty()) out << "source_test_images " << source_test_images << "\n";
  if (!source_test_labels.empty()) out << "source_test_labels " << source_test_labels << "\n";
  out << "synthesis_seed " << synthesis_seed << "\n";

  if (has_model) {
    out << "\n[model]\n";
    const std::string text = model.canonical_text();
    // Drop the model grammar's own header line; the section implies it.
    out << text.substr(text.find('\n') + 1);
  }

  out << "\n[train]\n";
  out << "batch " << train.batch_size << "\n";
  out << "lr " << fmt(train.lr) << "\n";
  out << "steps " << train.steps << "\n";
  out << "seed " << train.seed << "\n";
  if (train.baseline == BaselineKind::kNone)
    out << "baseline none\n";
  else
    out << "baseline moving_average " << fmt(train.baseline_decay) << "\n";
  out << "eval_cadence " << train.eval_cadence << "\n";
  out << "workers " << train.workers << "\n";
  for (const auto& p : train.prefs) out << serialize_pref(p) << "\n";

  out << "\n[sweep]\n";
  out << "eval_seed " << eval_seed << "\n";
  auto list_line = [&out](const char* key, const std::vector<double>& vs) {
    if (vs.empty()) return;
    out << key;
    for (double v : vs) out << " " << fmt(v);
    out << "\n";
  };
  list_line("gamma_g", gamma_g);
  list_line("gamma_e", gamma_e);
  list_line("rho", rho);

  out << "\n[heatmap]\n";
  out << "gamma_g " << fmt(heatmap_gamma_g) << "\n";
  out << "gamma_e " << fmt(heatmap_gamma_e) << "\n";

  out << "\n[eval]\n";
  out << "gamma_g " << fmt(eval_gamma_g) << "\n";
  out << "gamma_e " << fmt(eval_gamma_e) << "\n";

  out << "\n[ablate]\n";
  if (!ablate_seeds.empty()) {
    out << "seeds";
    for (uint64_t s : ablate_seeds) out << " " << s;
    out << "\n";
  }
  out << "gamma_e " << fmt(ablate_gamma_e) << "\n";
  out << "steps " << ablate_steps << "\n";

  out << "\n[output]\n";
  if (!out_dir.empty()) out << "dir " << out_dir << "\n";
  return out.str();
}

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.train.prefs.clear();

  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::vector<std::string> model_lines;
  bool saw_header = false;

  while (std::getline(in, raw)) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "composer-experiment v1")
        throw ConfigError("experiment config must start with 'composer-experiment v1'");
      saw_header = true;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'");
      section = line.substr(1, line.size() - 2);
      if (section != "dataset" && section != "model" && section != "train" &&
          section != "sweep" && section != "heatmap" && section != "eval" &&
          section != "ablate" && section != "output")
        throw ConfigError("unknown config section [" + section + "]");
      continue;
    }
    if (section.empty()) throw ConfigError("config line '" + line + "' appears before any section");

    if (section == "model") {
      model_lines.push_back(line);
      continue;
    }

    const std::vector<std::string> toks = tokens_of(line);
    const std::string& key = toks[0];
    if (section == "dataset") {
      if (key == "train_images") cfg.train_images = rest_after_key(line, key);
      else if (key == "train_labels") cfg.train_labels = rest_after_key(line, key);
      else if (key == "test_images") cfg.test_images = rest_after_key(line, key);
      else if (key == "test_labels") cfg.test_labels = rest_after_key(line, key);
      else if (key == "source_images") cfg.source_images = rest_after_key(line, key);
      else if (key == "source_labels") cfg.source_labels = rest_after_key(line, key);
      else if (key == "source_test_images") cfg.source_test_images = rest_after_key(line, key);
      else if (key == "source_test_labels") cfg.source_test_labels = rest_after_key(line, key);
      else if (key == "synthesis_seed") cfg.synthesis_seed = parse_u64(arg1(toks), key);
      else throw ConfigError("unknown [dataset] key '" + key + "'");
    } else if (section == "train") {
      if (key == "batch") cfg.train.batch_size = parse_int(arg1(toks), key);
      else if (key == "lr") cfg.train.lr = parse_double(arg1(toks), key);
      else if (key == "steps") cfg.train.steps = parse_int(arg1(toks), key);
      else if (key == "seed") cfg.train.seed = parse_u64(arg1(toks), key);
      else if (key == "baseline") {
        if (toks.size() >= 2 && toks[1] == "none" && toks.size() == 2) {
          cfg.train.baseline = BaselineKind::kNone;
        } else if (toks.size() == 3 && toks[1] == "moving_average") {
          cfg.train.baseline = BaselineKind::kMovingAverage;
          cfg.train.baseline_decay = parse_double(toks[2], "baseline decay");
        } else {
          throw ConfigError("baseline must be 'none' or 'moving_average DECAY'");
        }
      } else if (key == "eval_cadence") cfg.train.eval_cadence = parse_int(arg1(toks), key);
      else if (key == "workers") cfg.train.workers = parse_int(arg1(toks), key);
      else if (key == "pref") cfg.train.prefs.push_back(parse_pref(toks));
      else throw ConfigError("unknown [train] key '" + key + "'");
    } else if (section == "sweep") {
      if (key == "eval_seed") cfg.eval_seed = parse_u64(arg1(toks), key);
      else if (key == "gamma_g") cfg.gamma_g = parse_double_list(toks, key);
      else if (key == "gamma_e") cfg.gamma_e = parse_double_list(toks, key);
      else if (key == "rho") cfg.rho = parse_double_list(toks, key);
      else throw ConfigError("unknown [sweep] key '" + key + "'");
    } else if (section == "heatmap") {
      if (key == "gamma_g") cfg.heatmap_gamma_g = parse_double(arg1(toks), key);
      else if (key == "gamma_e") cfg.heatmap_gamma_e = parse_double(arg1(toks), key);
      else throw ConfigError("unknown [heatmap] key '" + key + "'");
    } else if (section == "eval") {
      if (key == "gamma_g") cfg.eval_gamma_g = parse_double(arg1(toks), key);
      else if (key == "gamma_e") cfg.eval_gamma_e = parse_double(arg1(toks), key);
      else throw ConfigError("unknown [eval] key '" + key + "'");
    } else if (section == "ablate") {
      if (key == "seeds") {
        cfg.ablate_seeds.clear();
        for (size_t i = 1; i < toks.size(); ++i)
          cfg.ablate_seeds.push_back(parse_u64(toks[i], "ablate seed"));
      } else if (key == "gamma_e") cfg.ablate_gamma_e = parse_double(arg1(toks), key);
      else if (key == "steps") cfg.ablate_steps = parse_int(arg1(toks), key);
      else throw ConfigError("unknown [ablate] key '" + key + "'");
    } else {  // output
      if (key == "dir") cfg.out_dir = rest_after_key(line, key);
      else throw ConfigError("unknown [output] key '" + key + "'");
    }
  }
  if (!saw_header) throw ConfigError("experiment config is empty");

  if (!model_lines.empty()) {
    std::string body = "composer-config v1\n";
    for (const auto& l : model_lines) body += l + "\n";
    cfg.model = ComposerConfig::parse_text(body);
    cfg.has_model = true;
  }
  cfg.train.validate();
  if (cfg.ablate_steps < 0) throw ConfigError("ablate steps must be non-negative");
  if (cfg.ablate_gamma_e < 0) throw ConfigError("ablate gamma_e must be non-negative");
  for (double g : cfg.gamma_g)
    if (g < 0) throw ConfigError("sweep gamma_g values must be non-negative");
  for (double g : cfg.gamma_e)
    if (g < 0) throw ConfigError("sweep gamma_e values must be non-negative");
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_text(buf.str());
}

}  // namespace composer
