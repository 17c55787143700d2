#include "defdiff/config.h"

#include <cctype>
#include <fstream>
#include <sstream>

#include "defdiff/check.h"

namespace defdiff {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> splitList(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

Config Config::fromFile(const std::string& path) {
  std::ifstream in(path);
  DD_CHECK_ARG(in.good(), "cannot open config file " << path);
  std::stringstream ss;
  ss << in.rdbuf();
  return fromText(ss.str(), path);
}

Config Config::fromText(const std::string& text, const std::string& context) {
  Config cfg;
  std::string section;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      DD_CHECK_ARG(t.back() == ']' && t.size() > 2,
                   context << ":" << lineno << ": malformed section header '" << t << "'");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t split = t.find_first_of(" \t=");
    DD_CHECK_ARG(split != std::string::npos,
                 context << ":" << lineno << ": expected 'key value', got '" << t << "'");
    const std::string key = t.substr(0, split);
    std::string value = trim(t.substr(split));
    if (!value.empty() && value[0] == '=') value = trim(value.substr(1));
    DD_CHECK_ARG(!value.empty(), context << ":" << lineno << ": key '" << key << "' has no value");
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

void Config::setOverride(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  DD_CHECK_ARG(eq != std::string::npos && eq > 0,
               "override must look like section.key=value, got '" << assignment << "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  DD_CHECK_ARG(!value.empty(), "override '" << key << "' has no value");
  values_[key] = value;
}

std::string Config::getString(const std::string& key) const {
  const auto it = values_.find(key);
  DD_CHECK_ARG(it != values_.end(), "missing required config key '" << key << "'");
  touched_.insert(key);
  return it->second;
}

std::string Config::getString(const std::string& key, const std::string& fallback) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int Config::getInt(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(it->second, &pos);
  } catch (const std::exception&) {
    DD_CHECK_ARG(false, "config key '" << key << "': '" << it->second << "' is not an integer");
  }
  DD_CHECK_ARG(pos == it->second.size(),
               "config key '" << key << "': trailing junk in '" << it->second << "'");
  return v;
}

int64_t Config::getInt64(const std::string& key, int64_t fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  int64_t v = 0;
  try {
    v = std::stoll(it->second, &pos);
  } catch (const std::exception&) {
    DD_CHECK_ARG(false, "config key '" << key << "': '" << it->second << "' is not an integer");
  }
  DD_CHECK_ARG(pos == it->second.size(),
               "config key '" << key << "': trailing junk in '" << it->second << "'");
  return v;
}

double Config::getDouble(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(it->second, &pos);
  } catch (const std::exception&) {
    DD_CHECK_ARG(false, "config key '" << key << "': '" << it->second << "' is not a number");
  }
  DD_CHECK_ARG(pos == it->second.size(),
               "config key '" << key << "': trailing junk in '" << it->second << "'");
  return v;
}

bool Config::getBool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  DD_CHECK_ARG(false, "config key '" << key << "': '" << v << "' is not a boolean");
  return fallback;
}

std::vector<int> Config::getIntList(const std::string& key,
                                    const std::vector<int>& fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const std::string& item : splitList(it->second)) {
    size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(item, &pos);
    } catch (const std::exception&) {
      DD_CHECK_ARG(false, "config key '" << key << "': '" << item << "' is not an integer");
    }
    DD_CHECK_ARG(pos == item.size(), "config key '" << key << "': trailing junk in '" << item << "'");
    out.push_back(v);
  }
  DD_CHECK_ARG(!out.empty(), "config key '" << key << "': empty list");
  return out;
}

std::vector<double> Config::getDoubleList(const std::string& key,
                                          const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  touched_.insert(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const std::string& item : splitList(it->second)) {
    size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &pos);
    } catch (const std::exception&) {
      DD_CHECK_ARG(false, "config key '" << key << "': '" << item << "' is not a number");
    }
    DD_CHECK_ARG(pos == item.size(), "config key '" << key << "': trailing junk in '" << item << "'");
    out.push_back(v);
  }
  DD_CHECK_ARG(!out.empty(), "config key '" << key << "': empty list");
  return out;
}

std::string Config::echo() const {
  // Group by section; keys already sort lexicographically inside the map.
  std::ostringstream out;
  std::string current = "\0none";  // sentinel no real section matches
  for (const auto& [key, value] : values_) {
    const size_t dot = key.rfind('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    if (section != current) {
      if (!current.empty() && current[0] != '\0') out << "\n";
      if (current[0] == '\0' && !section.empty() && out.tellp() > 0) out << "\n";
      if (!section.empty()) out << "[" << section << "]\n";
      current = section;
    }
    out << leaf << " " << value << "\n";
  }
  return out.str();
}

std::vector<std::string> Config::unusedKeys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (touched_.count(key) == 0) out.push_back(key);
  return out;
}

SceneConfig sceneFromConfig(const Config& cfg) {
  SceneConfig sc;
  sc.cameras = cfg.getInt("scene.cameras", sc.cameras);
  sc.sequences = cfg.getInt("scene.sequences", sc.sequences);
  sc.timesteps = cfg.getInt("scene.timesteps", sc.timesteps);
  sc.image_size = cfg.getInt("scene.image_size", sc.image_size);
  sc.proxy_resolution = cfg.getInt("scene.proxy_resolution", sc.proxy_resolution);
  sc.detail_resolution = cfg.getInt("scene.detail_resolution", sc.detail_resolution);
  sc.z_id = cfg.getDoubleList("scene.z_id", sc.z_id);
  sc.ring_radius = cfg.getDouble("scene.ring_radius", sc.ring_radius);
  sc.ring_height = cfg.getDouble("scene.ring_height", sc.ring_height);
  sc.fov_deg = cfg.getDouble("scene.fov_deg", sc.fov_deg);
  sc.holdout_camera = cfg.getInt("scene.holdout_camera", sc.holdout_camera);
  sc.holdout_sequence = cfg.getInt("scene.holdout_sequence", sc.holdout_sequence);
  sc.seed = static_cast<uint64_t>(cfg.getInt64("scene.seed", static_cast<int64_t>(sc.seed)));
  sc.validate();
  return sc;
}

TrainConfig trainFromConfig(const Config& cfg) {
  TrainConfig tc;
  tc.batch = cfg.getInt("train.batch", tc.batch);
  tc.steps = cfg.getInt("train.steps", tc.steps);
  tc.lr_net = cfg.getDouble("train.lr_net", tc.lr_net);
  tc.lr_atlas = cfg.getDouble("train.lr_atlas", tc.lr_atlas);
  tc.crop_min = cfg.getDouble("train.crop_min", tc.crop_min);
  tc.crop_max = cfg.getDouble("train.crop_max", tc.crop_max);
  tc.seed = static_cast<uint64_t>(cfg.getInt64("train.seed", static_cast<int64_t>(tc.seed)));
  const std::string mode = cfg.getString("train.mode", tc.mode == nn::CondMode::kPrior ? "prior"
                                                                                       : "scratch");
  if (mode == "prior") {
    tc.mode = nn::CondMode::kPrior;
  } else if (mode == "scratch") {
    tc.mode = nn::CondMode::kScratch;
  } else {
    DD_CHECK_ARG(false, "train.mode must be prior or scratch, got '" << mode << "'");
  }
  tc.no_exp_cond = cfg.getBool("train.no_exp_cond", tc.no_exp_cond);
  tc.no_features = cfg.getBool("train.no_features", tc.no_features);
  tc.spherical_uv = cfg.getBool("train.spherical_uv", tc.spherical_uv);
  tc.flame_like_proxy = cfg.getBool("train.flame_like_proxy", tc.flame_like_proxy);
  tc.base = cfg.getInt("train.base", tc.base);
  tc.mults = cfg.getIntList("train.mults", tc.mults);
  tc.attn_levels = cfg.getIntList("train.attn_levels", tc.attn_levels);
  tc.token_dim = cfg.getInt("train.token_dim", tc.token_dim);
  tc.num_tokens = cfg.getInt("train.num_tokens", tc.num_tokens);
  tc.groups = cfg.getInt("train.groups", tc.groups);
  tc.atlas_grid = cfg.getInt("train.atlas_grid", tc.atlas_grid);
  tc.atlas_ambient_grid = cfg.getInt("train.atlas_ambient_grid", tc.atlas_ambient_grid);
  tc.atlas_features = cfg.getInt("train.atlas_features", tc.atlas_features);
  tc.atlas_init_std = cfg.getDouble("train.atlas_init_std", tc.atlas_init_std);
  tc.sched_steps = cfg.getInt("train.sched_steps", tc.sched_steps);
  tc.beta_start = cfg.getDouble("train.beta_start", tc.beta_start);
  tc.beta_end = cfg.getDouble("train.beta_end", tc.beta_end);
  tc.zero_snr = cfg.getBool("train.zero_snr", tc.zero_snr);
  tc.validate();
  return tc;
}

FitConfig fitFromConfig(const Config& cfg) {
  FitConfig fc;
  fc.max_iters = cfg.getInt("fit.max_iters", fc.max_iters);
  fc.fd_step = cfg.getDouble("fit.fd_step", fc.fd_step);
  fc.init_step = cfg.getDouble("fit.init_step", fc.init_step);
  fc.min_step = cfg.getDouble("fit.min_step", fc.min_step);
  fc.prior_weight = cfg.getDouble("fit.prior_weight", fc.prior_weight);
  fc.resolution = cfg.getInt("fit.resolution", fc.resolution);
  return fc;
}

SampleOptions sampleFromConfig(const Config& cfg) {
  SampleOptions so;
  so.steps = cfg.getInt("sample.steps", so.steps);
  so.seed = static_cast<uint64_t>(cfg.getInt64("sample.seed", static_cast<int64_t>(so.seed)));
  DD_CHECK_ARG(so.steps >= 0, "sample.steps must be >= 0");
  return so;
}

}  // namespace defdiff
