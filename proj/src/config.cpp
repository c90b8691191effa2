#include "swamp/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace swamp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// shortest text that parses back to the same value
std::string fmt(double v) {
  char buf[40];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string fmt(float v) {
  char buf[40];
  for (int p = 1; p <= 9; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, static_cast<double>(v));
    if (std::strtof(buf, nullptr) == v) break;
  }
  return buf;
}

template <class T>
T parse_int(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

float parse_float(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const float v = std::strtof(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

std::string layers_text(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += ',';
    const auto& l = layers[i];
    switch (l.kind) {
      case LayerKind::Dense: out += "dense:" + std::to_string(l.in) + ':' + std::to_string(l.out); break;
      case LayerKind::Conv2d:
        out += "conv:" + std::to_string(l.in) + ':' + std::to_string(l.out) + ':' + std::to_string(l.kernel) + ':' +
               (l.padding == Padding::Same ? "same" : "valid");
        break;
      case LayerKind::Relu: out += "relu"; break;
      case LayerKind::Flatten: out += "flatten"; break;
    }
  }
  return out;
}

std::string schedule_name(Schedule::Kind k) {
  switch (k) {
    case Schedule::Kind::Constant: return "constant";
    case Schedule::Kind::Cosine: return "cosine";
    case Schedule::Kind::Piecewise: return "piecewise";
  }
  return "cosine";
}

std::string kinds_name(PrunableKinds k) {
  switch (k) {
    case PrunableKinds::Auto: return "auto";
    case PrunableKinds::Dense: return "dense";
    case PrunableKinds::Conv: return "conv";
    case PrunableKinds::DenseAndConv: return "dense+conv";
  }
  return "auto";
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "seed", "threads", "out", "save_particles", "model.input", "model.layers", "model.classes",
      "data.source", "data.train_size", "data.test_size", "data.noise", "data.seed", "data.train_images",
      "data.train_labels", "data.test_images", "data.test_labels", "data.limit", "data.test_limit",
      "data.holdout_fraction", "cycles", "keep_ratio", "particles", "particle_schedule", "rewind_steps",
      "ticket_lr", "epochs", "batch_size", "sgd.lr", "sgd.momentum", "sgd.weight_decay", "sgd.schedule",
      "sgd.cosine_steps", "sgd.piecewise", "swa.enabled", "swa.start_fraction", "swa.lr", "swa.period_epochs",
      "prune.kinds", "eval.every_epochs", "hessian.probes", "hessian.batch"};
  return keys;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_text(a) == to_text(b); }

Shape parse_shape(const std::string& text) {
  Shape s;
  for (const auto& part : split(text, 'x')) {
    const auto d = parse_int<Index>("model.input", part);
    if (d <= 0) throw ConfigError("model.input: dimensions must be positive, got '" + text + "'");
    s.push_back(d);
  }
  if (s.size() != 1 && s.size() != 3) throw ConfigError("model.input: expected F or CxHxW, got '" + text + "'");
  return s;
}

std::vector<LayerSpec> parse_layers(const std::string& text, const Shape& input_shape) {
  std::vector<LayerSpec> layers;
  Shape cur = input_shape;
  for (const auto& item : split(text, ',')) {
    const auto f = split(item, ':');
    const std::string& name = f[0];
    auto num = [&](std::size_t i) { return parse_int<Index>("model.layers", f[i]); };
    if (name == "relu" && f.size() == 1) {
      layers.push_back(LayerSpec::relu());
    } else if (name == "flatten" && f.size() == 1) {
      layers.push_back(LayerSpec::flatten());
      cur = {shape_numel(cur)};
    } else if (name == "dense" && (f.size() == 2 || f.size() == 3)) {
      const Index in = f.size() == 3 ? num(1) : shape_numel(cur);
      const Index out = num(f.size() - 1);
      layers.push_back(LayerSpec::dense(in, out));
      cur = {out};
    } else if (name == "conv" && f.size() >= 3 && f.size() <= 5) {
      // conv:OUT:K[:pad] or conv:IN:OUT:K:pad
      Padding pad = Padding::Same;
      std::vector<std::string> nums(f.begin() + 1, f.end());
      if (nums.back() == "same" || nums.back() == "valid") {
        pad = nums.back() == "same" ? Padding::Same : Padding::Valid;
        nums.pop_back();
      }
      if (nums.size() != 2 && nums.size() != 3) throw ConfigError("model.layers: malformed conv layer '" + item + "'");
      const Index in = nums.size() == 3 ? parse_int<Index>("model.layers", nums[0]) : (cur.empty() ? 0 : cur[0]);
      const Index out = parse_int<Index>("model.layers", nums[nums.size() - 2]);
      const Index k = parse_int<Index>("model.layers", nums.back());
      layers.push_back(LayerSpec::conv2d(in, out, k, pad));
      if (cur.size() == 3) {
        const Index shrink = pad == Padding::Valid ? k - 1 : 0;
        cur = {out, cur[1] - shrink, cur[2] - shrink};
      }
    } else {
      throw ConfigError("model.layers: cannot parse layer '" + item + "'");
    }
  }
  return layers;
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    map[key] = trim(t.substr(eq + 1));
  }
  return map;
}

ExperimentConfig config_from_map(const ConfigMap& map) {
  const auto& keys = known_keys();
  for (const auto& [k, v] : map) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  auto get = [&](const std::string& k) -> const std::string* {
    const auto it = map.find(k);
    return it == map.end() ? nullptr : &it->second;
  };
  auto required = [&](const std::string& k) -> const std::string& {
    const auto* v = get(k);
    if (!v || v->empty()) throw ConfigError("missing required config key '" + k + "'");
    return *v;
  };

  ExperimentConfig c;
  c.seed = parse_int<std::uint64_t>("seed", required("seed"));
  c.model.input_shape = parse_shape(required("model.input"));
  c.model.layers = parse_layers(required("model.layers"), c.model.input_shape);
  c.model.classes = parse_int<Index>("model.classes", required("model.classes"));
  validate(c.model);
  c.data.source = required("data.source");
  if (c.data.source != "blobs" && c.data.source != "spirals" && c.data.source != "idx") {
    throw ConfigError("data.source: expected blobs, spirals or idx, got '" + c.data.source + "'");
  }

  if (const auto* v = get("threads")) c.threads = parse_int<int>("threads", *v);
  if (const auto* v = get("out")) c.out = *v;
  if (const auto* v = get("save_particles")) c.save_particles = parse_bool("save_particles", *v);
  if (const auto* v = get("data.train_size")) c.data.train_size = parse_int<Index>("data.train_size", *v);
  if (const auto* v = get("data.test_size")) c.data.test_size = parse_int<Index>("data.test_size", *v);
  if (const auto* v = get("data.noise")) c.data.noise = parse_double("data.noise", *v);
  if (const auto* v = get("data.seed")) c.data.seed = parse_int<std::uint64_t>("data.seed", *v);
  if (const auto* v = get("data.train_images")) c.data.train_images = *v;
  if (const auto* v = get("data.train_labels")) c.data.train_labels = *v;
  if (const auto* v = get("data.test_images")) c.data.test_images = *v;
  if (const auto* v = get("data.test_labels")) c.data.test_labels = *v;
  if (const auto* v = get("data.limit")) c.data.limit = parse_int<Index>("data.limit", *v);
  if (const auto* v = get("data.test_limit")) c.data.test_limit = parse_int<Index>("data.test_limit", *v);
  if (const auto* v = get("data.holdout_fraction")) c.data.holdout_fraction = parse_double("data.holdout_fraction", *v);
  if (const auto* v = get("cycles")) c.cycles = parse_int<Index>("cycles", *v);
  if (const auto* v = get("keep_ratio")) c.keep_ratio = parse_double("keep_ratio", *v);
  if (const auto* v = get("particles")) c.particles = parse_int<Index>("particles", *v);
  if (const auto* v = get("particle_schedule"); v && !v->empty()) {
    for (const auto& p : split(*v, ',')) c.particle_schedule.push_back(parse_int<Index>("particle_schedule", p));
  }
  if (const auto* v = get("rewind_steps")) c.rewind_steps = parse_int<long>("rewind_steps", *v);
  if (const auto* v = get("ticket_lr")) c.ticket_lr = parse_float("ticket_lr", *v);
  if (const auto* v = get("epochs")) c.epochs = parse_int<long>("epochs", *v);
  if (const auto* v = get("batch_size")) c.batch_size = parse_int<Index>("batch_size", *v);
  if (const auto* v = get("sgd.lr")) c.sgd.lr0 = parse_float("sgd.lr", *v);
  if (const auto* v = get("sgd.momentum")) c.sgd.momentum = parse_float("sgd.momentum", *v);
  if (const auto* v = get("sgd.weight_decay")) c.sgd.weight_decay = parse_float("sgd.weight_decay", *v);
  if (const auto* v = get("sgd.schedule")) {
    if (*v == "constant") c.sgd.schedule.kind = Schedule::Kind::Constant;
    else if (*v == "cosine") c.sgd.schedule.kind = Schedule::Kind::Cosine;
    else if (*v == "piecewise") c.sgd.schedule.kind = Schedule::Kind::Piecewise;
    else throw ConfigError("sgd.schedule: expected constant, cosine or piecewise, got '" + *v + "'");
  }
  if (const auto* v = get("sgd.cosine_steps")) c.sgd.schedule.total_steps = parse_int<long>("sgd.cosine_steps", *v);
  if (const auto* v = get("sgd.piecewise"); v && !v->empty()) {
    for (const auto& p : split(*v, ',')) {
      const auto kv = split(p, ':');
      if (kv.size() != 2) throw ConfigError("sgd.piecewise: expected step:lr pairs, got '" + p + "'");
      c.sgd.schedule.points.emplace_back(parse_int<long>("sgd.piecewise", kv[0]), parse_float("sgd.piecewise", kv[1]));
    }
  }
  if (c.sgd.schedule.kind == Schedule::Kind::Piecewise && c.sgd.schedule.points.empty()) {
    throw ConfigError("sgd.schedule = piecewise needs sgd.piecewise");
  }
  if (const auto* v = get("swa.enabled")) c.swa.enabled = parse_bool("swa.enabled", *v);
  if (const auto* v = get("swa.start_fraction")) c.swa.start_fraction = parse_double("swa.start_fraction", *v);
  if (const auto* v = get("swa.lr")) c.swa.lr = parse_float("swa.lr", *v);
  if (const auto* v = get("swa.period_epochs")) c.swa.period_epochs = parse_int<long>("swa.period_epochs", *v);
  if (const auto* v = get("prune.kinds")) {
    if (*v == "auto") c.prunable = PrunableKinds::Auto;
    else if (*v == "dense") c.prunable = PrunableKinds::Dense;
    else if (*v == "conv") c.prunable = PrunableKinds::Conv;
    else if (*v == "dense+conv") c.prunable = PrunableKinds::DenseAndConv;
    else throw ConfigError("prune.kinds: expected auto, dense, conv or dense+conv, got '" + *v + "'");
  }
  if (const auto* v = get("eval.every_epochs")) c.eval_every_epochs = parse_int<long>("eval.every_epochs", *v);
  if (const auto* v = get("hessian.probes")) c.hessian_probes = parse_int<Index>("hessian.probes", *v);
  if (const auto* v = get("hessian.batch")) c.hessian_batch = parse_int<Index>("hessian.batch", *v);

  if (c.cycles < 0) throw ConfigError("cycles must be non-negative");
  if (!(c.keep_ratio > 0.0 && c.keep_ratio < 1.0)) throw ConfigError("keep_ratio must lie in (0, 1)");
  if (c.particles < 1) throw ConfigError("particles must be at least 1");
  if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (c.rewind_steps < 0) throw ConfigError("rewind_steps must be non-negative");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (!(c.swa.start_fraction >= 0.0 && c.swa.start_fraction < 1.0)) throw ConfigError("swa.start_fraction must lie in [0, 1)");
  if (c.swa.period_epochs < 1) throw ConfigError("swa.period_epochs must be at least 1");
  if (!(c.data.holdout_fraction >= 0.0 && c.data.holdout_fraction < 1.0)) {
    throw ConfigError("data.holdout_fraction must lie in [0, 1)");
  }
  if (c.data.source == "idx" && (c.data.train_images.empty() || c.data.train_labels.empty() ||
                                 c.data.test_images.empty() || c.data.test_labels.empty())) {
    throw ConfigError("data.source = idx needs data.train_images, data.train_labels, data.test_images, data.test_labels");
  }
  return c;
}

ConfigMap config_to_map(const ExperimentConfig& c) {
  ConfigMap m;
  m["seed"] = std::to_string(c.seed);
  m["threads"] = std::to_string(c.threads);
  m["out"] = c.out;
  m["save_particles"] = c.save_particles ? "true" : "false";
  m["model.input"] = shape_text(c.model.input_shape);
  m["model.layers"] = layers_text(c.model.layers);
  m["model.classes"] = std::to_string(c.model.classes);
  m["data.source"] = c.data.source;
  m["data.train_size"] = std::to_string(c.data.train_size);
  m["data.test_size"] = std::to_string(c.data.test_size);
  m["data.noise"] = fmt(c.data.noise);
  m["data.seed"] = std::to_string(c.data.seed);
  m["data.train_images"] = c.data.train_images;
  m["data.train_labels"] = c.data.train_labels;
  m["data.test_images"] = c.data.test_images;
  m["data.test_labels"] = c.data.test_labels;
  m["data.limit"] = std::to_string(c.data.limit);
  m["data.test_limit"] = std::to_string(c.data.test_limit);
  m["data.holdout_fraction"] = fmt(c.data.holdout_fraction);
  m["cycles"] = std::to_string(c.cycles);
  m["keep_ratio"] = fmt(c.keep_ratio);
  m["particles"] = std::to_string(c.particles);
  std::string sched;
  for (std::size_t i = 0; i < c.particle_schedule.size(); ++i) {
    if (i) sched += ',';
    sched += std::to_string(c.particle_schedule[i]);
  }
  m["particle_schedule"] = sched;
  m["rewind_steps"] = std::to_string(c.rewind_steps);
  m["ticket_lr"] = fmt(c.ticket_lr);
  m["epochs"] = std::to_string(c.epochs);
  m["batch_size"] = std::to_string(c.batch_size);
  m["sgd.lr"] = fmt(c.sgd.lr0);
  m["sgd.momentum"] = fmt(c.sgd.momentum);
  m["sgd.weight_decay"] = fmt(c.sgd.weight_decay);
  m["sgd.schedule"] = schedule_name(c.sgd.schedule.kind);
  m["sgd.cosine_steps"] = std::to_string(c.sgd.schedule.total_steps);
  std::string pw;
  for (std::size_t i = 0; i < c.sgd.schedule.points.size(); ++i) {
    if (i) pw += ',';
    pw += std::to_string(c.sgd.schedule.points[i].first) + ':' + fmt(c.sgd.schedule.points[i].second);
  }
  m["sgd.piecewise"] = pw;
  m["swa.enabled"] = c.swa.enabled ? "true" : "false";
  m["swa.start_fraction"] = fmt(c.swa.start_fraction);
  m["swa.lr"] = fmt(c.swa.lr);
  m["swa.period_epochs"] = std::to_string(c.swa.period_epochs);
  m["prune.kinds"] = kinds_name(c.prunable);
  m["eval.every_epochs"] = std::to_string(c.eval_every_epochs);
  m["hessian.probes"] = std::to_string(c.hessian_probes);
  m["hessian.batch"] = std::to_string(c.hessian_batch);
  return m;
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_to_map(cfg)) out += k + " = " + v + "\n";
  return out;
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return cfg;
  ConfigMap m = config_to_map(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    m[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  return config_from_map(m);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  ConfigMap m = parse_config_text(buf.str());
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    m[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  return config_from_map(m);
}

std::uint64_t config_digest(const ExperimentConfig& cfg) {
  ConfigMap m = config_to_map(cfg);
  m.erase("out");
  m.erase("threads");
  std::string text;
  for (const auto& [k, v] : m) text += k + "=" + v + "\n";
  return fnv1a64(text.data(), text.size());
}

LotteryConfig lottery_config(const ExperimentConfig& cfg) {
  LotteryConfig l;
  l.seed = cfg.seed;
  l.cycles = cfg.cycles;
  l.keep_ratio = cfg.keep_ratio;
  l.particles = cfg.particles;
  l.particle_schedule = cfg.particle_schedule;
  l.rewind_steps = cfg.rewind_steps;
  l.ticket_lr = cfg.ticket_lr;
  l.swa = cfg.swa.enabled;
  l.threads = cfg.threads;
  l.keep_particles = true;
  return l;
}

void configure_setup(TrainSetup& setup, const ExperimentConfig& cfg) {
  setup.batch_size = cfg.batch_size;
  setup.epochs = cfg.epochs;
  setup.sgd = cfg.sgd;
  setup.swa = cfg.swa;
}

}  // namespace swamp
