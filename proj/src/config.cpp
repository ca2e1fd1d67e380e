#include "pottsmg/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pottsmg/errors.hpp"

namespace pmg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Thrown by the value parsers; the caller adds the key and line.
struct BadValue {
  std::string why;
};

long parse_int(const std::string& s) {
  long v = 0;
  const auto t = trim(s);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw BadValue{"expected an integer"};
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto t = trim(s);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw BadValue{"expected a non-negative integer"};
  return v;
}

double parse_real(const std::string& s) {
  const auto t = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty()) throw BadValue{"expected a real number"};
  return v;
}

bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "on" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "off" || t == "no") return false;
  throw BadValue{"expected true or false"};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::string t = trim(s);
  if (!t.empty() && t.front() == '{' && t.back() == '}') t = t.substr(1, t.size() - 2);
  std::stringstream in(t);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& x : split_list(s)) out.push_back(static_cast<int>(parse_int(x)));
  if (out.empty()) throw BadValue{"expected a comma-separated integer list"};
  return out;
}

std::vector<double> parse_real_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& x : split_list(s)) out.push_back(parse_real(x));
  if (out.empty()) throw BadValue{"expected a comma-separated number list"};
  return out;
}

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%g", v);
  return b;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) out += fmt(v[i]);
    else out += v[i];
  }
  return out;
}

std::string join_int(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Mixed: return "mixed";
  }
  return "mixed";
}

const std::string kPaper = "published";
const std::string kDesk = "desk-scale";
const std::string kLocal = "artifact";

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  auto add = [&](std::string key, std::string source, std::string help,
                 std::function<void(RunConfig&, const std::string&)> set,
                 std::function<std::string(const RunConfig&)> get) {
    k.push_back({std::move(key), std::move(source), std::move(help), std::move(set), std::move(get)});
  };
  add("net.J", kPaper, "grid levels", [](RunConfig& c, const std::string& v) { c.net.levels = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.levels); });
  add("net.L", kPaper, "substeps per level", [](RunConfig& c, const std::string& v) { c.net.substeps = parse_int_list(v); },
      [](const RunConfig& c) { return join_int(c.net.substeps); });
  add("net.c", kPaper, "channels per level", [](RunConfig& c, const std::string& v) { c.net.widths = parse_int_list(v); },
      [](const RunConfig& c) { return join_int(c.net.widths); });
  add("net.N", kPaper, "time steps", [](RunConfig& c, const std::string& v) { c.net.time_steps = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.time_steps); });
  add("net.dt", kPaper, "time step size", [](RunConfig& c, const std::string& v) { c.net.dt = parse_real(v); },
      [](const RunConfig& c) { return fmt(c.net.dt); });
  add("net.epsilon", kPaper, "entropy weight", [](RunConfig& c, const std::string& v) { c.net.epsilon = parse_real(v); },
      [](const RunConfig& c) { return fmt(c.net.epsilon); });
  add("net.eta", kPaper, "length weight of the final step",
      [](RunConfig& c, const std::string& v) { c.net.eta = parse_real(v); },
      [](const RunConfig& c) { return fmt(c.net.eta); });
  add("net.sigma", kPaper, "Gaussian width of the length term",
      [](RunConfig& c, const std::string& v) { c.net.sigma = parse_real(v); },
      [](const RunConfig& c) { return fmt(c.net.sigma); });
  add("net.gaussian_radius", kPaper, "Gaussian stencil radius",
      [](RunConfig& c, const std::string& v) { c.net.gaussian_radius = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.gaussian_radius); });
  add("net.variant", kLocal, "pottsmg | unet | segnet",
      [](RunConfig& c, const std::string& v) {
        try {
          c.net.variant = parse_variant(trim(v));
        } catch (const ConfigError& e) {
          throw BadValue{e.what()};
        }
      },
      [](const RunConfig& c) { return to_string(c.net.variant); });
  add("net.act_iters", kPaper, "fixed-point iterations per activation",
      [](RunConfig& c, const std::string& v) { c.net.act_iters = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.act_iters); });
  add("net.batchnorm", kPaper, "batch normalization before intermediate activations",
      [](RunConfig& c, const std::string& v) { c.net.batchnorm = parse_bool(v); },
      [](const RunConfig& c) { return std::string(c.net.batchnorm ? "true" : "false"); });
  add("net.pool", kPaper, "max | average downsampling of features",
      [](RunConfig& c, const std::string& v) {
        const auto t = trim(v);
        if (t == "max") c.net.pool = PoolMode::Max;
        else if (t == "average") c.net.pool = PoolMode::Average;
        else throw BadValue{"expected max or average"};
      },
      [](const RunConfig& c) { return std::string(c.net.pool == PoolMode::Max ? "max" : "average"); });
  add("net.radius_init", kLocal, "radius of the input kernels",
      [](RunConfig& c, const std::string& v) { c.net.radius_init = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.radius_init); });
  add("net.radius_coarse", kLocal, "kernel radius on the coarsest level",
      [](RunConfig& c, const std::string& v) { c.net.radius_coarse = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.radius_coarse); });
  add("net.radius", kLocal, "kernel radius on the other levels",
      [](RunConfig& c, const std::string& v) { c.net.radius_default = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.net.radius_default); });
  add("net.tie_weights", kLocal, "share one parameter set across time steps",
      [](RunConfig& c, const std::string& v) { c.net.tie_weights = parse_bool(v); },
      [](const RunConfig& c) { return std::string(c.net.tie_weights ? "true" : "false"); });
  add("net.kappa_c1", kPaper, "use C1 = 1/kappa instead of 1",
      [](RunConfig& c, const std::string& v) { c.net.kappa_c1 = parse_bool(v); },
      [](const RunConfig& c) { return std::string(c.net.kappa_c1 ? "true" : "false"); });

  add("train.schedule", kPaper, "noise SD per stage (non-decreasing)",
      [](RunConfig& c, const std::string& v) { c.train.schedule = parse_real_list(v); },
      [](const RunConfig& c) { return join(c.train.schedule); });
  add("train.epochs", kDesk, "epochs per stage", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.train.epochs); });
  add("train.lr", kLocal, "learning rate", [](RunConfig& c, const std::string& v) { c.train.lr = parse_real(v); },
      [](const RunConfig& c) { return fmt(c.train.lr); });
  add("train.batch", kDesk, "minibatch size", [](RunConfig& c, const std::string& v) { c.train.batch = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.train.batch); });
  add("train.optimizer", kLocal, "adam | sgd",
      [](RunConfig& c, const std::string& v) {
        const auto t = trim(v);
        if (t == "adam") c.train.optimizer = OptimizerKind::Adam;
        else if (t == "sgd") c.train.optimizer = OptimizerKind::Sgd;
        else throw BadValue{"expected adam or sgd"};
      },
      [](const RunConfig& c) { return std::string(c.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"); });
  add("train.setting", kPaper, "noise setting: 1 per-pixel SD ~ U[0,a], 2 constant SD",
      [](RunConfig& c, const std::string& v) {
        const long s = parse_int(v);
        if (s != 1 && s != 2) throw BadValue{"expected 1 or 2"};
        c.train.setting = static_cast<NoiseSetting>(s);
      },
      [](const RunConfig& c) { return std::to_string(static_cast<int>(c.train.setting)); });
  add("train.seed", kLocal, "training seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v); },
      [](const RunConfig& c) { return std::to_string(c.train.seed); });

  add("data.train", kLocal, "training set directory",
      [](RunConfig& c, const std::string& v) { c.data.train_dir = trim(v); },
      [](const RunConfig& c) { return c.data.train_dir; });
  add("data.test", kLocal, "test set directory", [](RunConfig& c, const std::string& v) { c.data.test_dir = trim(v); },
      [](const RunConfig& c) { return c.data.test_dir; });
  add("data.out", kLocal, "output directory", [](RunConfig& c, const std::string& v) { c.data.out = trim(v); },
      [](const RunConfig& c) { return c.data.out; });
  add("data.checkpoint", kLocal, "checkpoint path",
      [](RunConfig& c, const std::string& v) { c.data.checkpoint = trim(v); },
      [](const RunConfig& c) { return c.data.checkpoint; });
  add("data.log", kLocal, "training log CSV path", [](RunConfig& c, const std::string& v) { c.data.log = trim(v); },
      [](const RunConfig& c) { return c.data.log; });
  add("data.inputs", kLocal, "images for infer (comma-separated)",
      [](RunConfig& c, const std::string& v) { c.data.inputs = split_list(v); },
      [](const RunConfig& c) { return join(c.data.inputs); });
  add("data.size", kDesk, "generated image side length",
      [](RunConfig& c, const std::string& v) { c.data.size = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.data.size); });
  add("data.count", kDesk, "generated training samples",
      [](RunConfig& c, const std::string& v) { c.data.count = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.data.count); });
  add("data.test_count", kDesk, "generated test samples",
      [](RunConfig& c, const std::string& v) { c.data.test_count = parse_int(v); },
      [](const RunConfig& c) { return std::to_string(c.data.test_count); });
  add("data.shapes", kLocal, "disk | rectangle | mixed",
      [](RunConfig& c, const std::string& v) {
        try {
          c.data.shapes = parse_shape_kind(trim(v));
        } catch (const ConfigError& e) {
          throw BadValue{e.what()};
        }
      },
      [](const RunConfig& c) { return shape_name(c.data.shapes); });
  add("data.seed", kLocal, "dataset and evaluation-noise seed",
      [](RunConfig& c, const std::string& v) { c.data.seed = parse_u64(v); },
      [](const RunConfig& c) { return std::to_string(c.data.seed); });
  add("data.eval_sds", kPaper, "noise SDs swept by eval",
      [](RunConfig& c, const std::string& v) { c.data.eval_sds = parse_real_list(v); },
      [](const RunConfig& c) { return join(c.data.eval_sds); });
  add("data.precision", kLocal, "checkpoint precision: 32 or 64",
      [](RunConfig& c, const std::string& v) {
        const long p = parse_int(v);
        if (p != 32 && p != 64) throw BadValue{"expected 32 or 64"};
        c.data.precision = static_cast<Precision>(p);
      },
      [](const RunConfig& c) { return std::to_string(static_cast<int>(c.data.precision)); });
  return k;
}

const ConfigKey* find_key(const std::string& key) {
  for (const ConfigKey& k : config_keys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError(where + ": unknown key '" + key + "'");
  try {
    k->set(cfg, value);
  } catch (const BadValue& e) {
    throw ConfigError(where + ": key '" + key + "': bad value '" + trim(value) + "' (" + e.why + ")");
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void RunConfig::validate() const {
  net.validate();
  train.validate();
  if (data.size < 1) throw ConfigError("data.size must be >= 1");
  if (data.count < 0 || data.test_count < 0) throw ConfigError("data.count must be >= 0");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::stringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + " line " + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    set_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1), where);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides) {
  for (const auto& [key, value] : overrides) set_value(cfg, key, value, "command line --" + key);
  cfg.validate();
}

std::string describe_keys() {
  const RunConfig defaults;
  std::string out;
  char line[256];
  for (const ConfigKey& k : config_keys()) {
    std::snprintf(line, sizeof(line), "  %-20s %-22s [%s] %s\n", k.key.c_str(), k.get(defaults).c_str(),
                  k.source.c_str(), k.help.c_str());
    out += line;
  }
  return out;
}

}  // namespace pmg
