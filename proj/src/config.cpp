#include "uoro/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace uoro {

std::string to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::Bptt: return "bptt";
    case EstimatorKind::Rtrl: return "neither";
    case EstimatorKind::Spatial: return "spatial";
    case EstimatorKind::PreUoro: return "temporal";
    case EstimatorKind::Uoro: return "both";
    case EstimatorKind::Reinforce: return "reinforce";
  }
  return "?";
}

std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Queue: return "queue";
    case TaskKind::Digits: return "digits";
    case TaskKind::Random: return "random";
  }
  return "?";
}

std::string to_string(AlphaMode a) {
  switch (a) {
    case AlphaMode::Gir: return "gir";
    case AlphaMode::Ours: return "ours";
    case AlphaMode::Unit: return "unit";
    case AlphaMode::Greedy: return "greedy";
  }
  return "?";
}

std::string to_string(Q0Mode q) { return q == Q0Mode::Ours ? "ours" : "identity"; }

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "bptt") return EstimatorKind::Bptt;
  if (s == "neither" || s == "rtrl") return EstimatorKind::Rtrl;
  if (s == "spatial") return EstimatorKind::Spatial;
  if (s == "temporal" || s == "preuoro") return EstimatorKind::PreUoro;
  if (s == "both" || s == "uoro") return EstimatorKind::Uoro;
  if (s == "reinforce") return EstimatorKind::Reinforce;
  throw std::invalid_argument("unknown estimator '" + s + "'");
}

TaskKind parse_task(const std::string& s) {
  if (s == "queue") return TaskKind::Queue;
  if (s == "digits" || s == "rowwise-digits") return TaskKind::Digits;
  if (s == "random") return TaskKind::Random;
  throw std::invalid_argument("unknown task '" + s + "'");
}

AlphaMode parse_alpha_mode(const std::string& s) {
  if (s == "gir") return AlphaMode::Gir;
  if (s == "ours" || s == "newton") return AlphaMode::Ours;
  if (s == "unit") return AlphaMode::Unit;
  if (s == "greedy") return AlphaMode::Greedy;
  throw std::invalid_argument("unknown alpha mode '" + s + "'");
}

Q0Mode parse_q0_mode(const std::string& s) {
  if (s == "identity") return Q0Mode::Identity;
  if (s == "ours" || s == "optimal") return Q0Mode::Ours;
  throw std::invalid_argument("unknown q0 mode '" + s + "'");
}

void apply_preset(ExperimentConfig& cfg) {
  if (cfg.task == TaskKind::Queue) {
    cfg.momentum = 0.5;
    cfg.minibatch = 100;
    cfg.delay = 4;
    cfg.hidden = 50;
    switch (cfg.estimator) {
      case EstimatorKind::PreUoro: cfg.lr = 0.0008; break;
      case EstimatorKind::Uoro: cfg.lr = 0.002; break;
      default: cfg.lr = 0.008; break;
    }
    return;
  }
  if (cfg.task == TaskKind::Digits) {
    cfg.cell = CellKind::Lstm;
    cfg.hidden = 50;
    cfg.minibatch = 50;
    cfg.length = 28;
    const bool q_ours = cfg.q0 == Q0Mode::Ours;
    const bool a_ours = cfg.alpha == AlphaMode::Ours;
    if (!q_ours) {
      cfg.lr = 0.005;
      cfg.momentum = a_ours ? 0.5 : 0.8;
    } else if (!a_ours) {
      cfg.lr = 0.005;
      cfg.momentum = 0.5;
      cfg.bbar_decay = 0.9;
      cfg.damping = 0.008;
    } else {
      cfg.lr = 0.003;
      cfg.momentum = 0.8;
      cfg.bbar_decay = 0.9;
      cfg.damping = 0.005;
    }
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define UORO_SIZE_FIELD(name)                                                     \
  Field{#name, [](const ExperimentConfig& c) { return std::to_string(c.name); }, \
        [](ExperimentConfig& c, const std::string& v) { c.name = static_cast<std::size_t>(to_u64(#name, v)); }}
#define UORO_DOUBLE_FIELD(name)                                               \
  Field{#name, [](const ExperimentConfig& c) { return fmt_double(c.name); }, \
        [](ExperimentConfig& c, const std::string& v) { c.name = to_double(#name, v); }}
#define UORO_BOOL_FIELD(name)                                                     \
  Field{#name, [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.name = to_bool(#name, v); }}
#define UORO_STRING_FIELD(name) \
  Field{#name, [](const ExperimentConfig& c) { return c.name; }, [](ExperimentConfig& c, const std::string& v) { c.name = v; }}
#define UORO_ENUM_FIELD(name, parse)                                           \
  Field{#name, [](const ExperimentConfig& c) { return to_string(c.name); }, \
        [](ExperimentConfig& c, const std::string& v) { c.name = parse(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      UORO_ENUM_FIELD(task, parse_task),
      UORO_ENUM_FIELD(estimator, parse_estimator),
      UORO_ENUM_FIELD(cut, parse_cut_vertex),
      UORO_ENUM_FIELD(alpha, parse_alpha_mode),
      UORO_ENUM_FIELD(q0, parse_q0_mode),
      UORO_ENUM_FIELD(noise, parse_noise_mode),
      UORO_ENUM_FIELD(cell, parse_cell_kind),
      UORO_SIZE_FIELD(hidden),
      UORO_SIZE_FIELD(input_dim),
      UORO_SIZE_FIELD(delay),
      UORO_SIZE_FIELD(length),
      UORO_SIZE_FIELD(minibatch),
      UORO_SIZE_FIELD(episodes),
      Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
            [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
      UORO_DOUBLE_FIELD(lr),
      UORO_DOUBLE_FIELD(momentum),
      UORO_DOUBLE_FIELD(bbar_decay),
      UORO_DOUBLE_FIELD(damping),
      UORO_DOUBLE_FIELD(sigma),
      UORO_DOUBLE_FIELD(gir_scale),
      UORO_BOOL_FIELD(lagged_split),
      UORO_SIZE_FIELD(audit_every),
      UORO_SIZE_FIELD(mc_samples),
      UORO_STRING_FIELD(digits_images),
      UORO_STRING_FIELD(digits_labels),
      UORO_SIZE_FIELD(synthetic_count),
      UORO_BOOL_FIELD(preset),
  };
  return f;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string to_text(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const Field& f : fields()) out << f.key << " = " << f.get(cfg) << "\n";
  return out.str();
}

ExperimentConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  ExperimentConfig cfg;
  // Presets are applied once the selectors are known, then explicit keys win.
  for (const auto& [k, v] : entries) set_config_value(cfg, k, v);
  if (cfg.preset) {
    apply_preset(cfg);
    const std::vector<std::string> overridable = {"lr", "momentum", "bbar_decay", "damping", "minibatch",
                                                  "delay", "hidden", "cell", "length"};
    for (const auto& [k, v] : entries)
      for (const auto& o : overridable)
        if (k == o) set_config_value(cfg, k, v);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace uoro
