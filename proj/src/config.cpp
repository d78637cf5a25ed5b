#include "lm/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lm::config {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    require(used == v.size(), "");
    return out;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    require(used == v.size(), "");
    return out;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("config: key '" + key + "' needs 0/1/true/false, got '" + v + "'");
}

std::string fmt_f64(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

bool KvConfig::has(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return true;
  return false;
}

const std::string& KvConfig::get(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return v;
  throw std::invalid_argument("config: missing key '" + key + "'");
}

void KvConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items)
    if (k == key) {
      v = value;
      return;
    }
  items.emplace_back(key, value);
}

KvConfig parse_config_text(const std::string& text) {
  KvConfig kv;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(lineno) + " is not 'key=value': '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    require(!key.empty(), "config: line " + std::to_string(lineno) + " has an empty key");
    require(!kv.has(key),
            "config: line " + std::to_string(lineno) + " repeats key '" + key + "'");
    kv.items.emplace_back(key, val);
  }
  return kv;
}

KvConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "config: cannot open file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string canonical(const KvConfig& kv) {
  auto items = kv.items;
  std::sort(items.begin(), items.end());
  std::string out;
  for (const auto& [k, v] : items) out += k + "=" + v + "\n";
  return out;
}

std::string run_id(const KvConfig& kv) {
  std::string canon = canonical(kv);
  char buf[64];
  std::string seed = kv.has("seed") ? kv.get("seed") : "1";
  std::snprintf(buf, sizeof(buf), "%016llx-s%s",
                static_cast<unsigned long long>(fnv1a64(canon)), seed.c_str());
  return buf;
}

train::TrainConfig to_train_config(const KvConfig& kv) {
  train::TrainConfig cfg;
  for (const auto& [key, val] : kv.items) {
    if (key == "data.kind") {
      using K = data::DatasetSpec::Kind;
      if (val == "swiss2d")
        cfg.dataset.kind = K::SwissRoll2d;
      else if (val == "swiss3d")
        cfg.dataset.kind = K::SwissRoll3d;
      else if (val == "idx")
        cfg.dataset.kind = K::IdxFile;
      else
        throw std::invalid_argument("config: data.kind must be swiss2d|swiss3d|idx, got '" +
                                    val + "'");
    } else if (key == "data.n")
      cfg.dataset.n = parse_i64(key, val);
    else if (key == "data.noise")
      cfg.dataset.noise = parse_f64(key, val);
    else if (key == "data.seed")
      cfg.dataset.seed = static_cast<uint64_t>(parse_i64(key, val));
    else if (key == "data.normalize")
      cfg.dataset.normalize = parse_bool(key, val);
    else if (key == "data.idx_path")
      cfg.dataset.idx_path = val;
    else if (key == "model.dz")
      cfg.hp.d_z = parse_i64(key, val);
    else if (key == "model.batch")
      cfg.hp.batch = parse_i64(key, val);
    else if (key == "model.width")
      cfg.width = parse_i64(key, val);
    else if (key == "model.depth")
      cfg.depth = parse_i64(key, val);
    else if (key == "hp.lambda")
      cfg.hp.lambda = parse_f64(key, val);
    else if (key == "hp.gamma")
      cfg.hp.gamma = parse_f64(key, val);
    else if (key == "hp.omega1")
      cfg.hp.omega1 = parse_f64(key, val);
    else if (key == "hp.omega2")
      cfg.hp.omega2 = parse_f64(key, val);
    else if (key == "hp.mu_max")
      cfg.hp.mu_max = parse_f64(key, val);
    else if (key == "hp.bn_eps")
      cfg.hp.bn_eps = parse_f64(key, val);
    else if (key == "hp.bn_rho")
      cfg.hp.bn_rho = parse_f64(key, val);
    else if (key == "hp.bn_enabled")
      cfg.hp.bn_enabled = parse_bool(key, val);
    else if (key == "hp.leaky_slope")
      cfg.hp.leaky_slope = parse_f64(key, val);
    else if (key == "optim.lr_ae")
      cfg.lr_ae = parse_f64(key, val);
    else if (key == "optim.lr_critic")
      cfg.lr_critic = parse_f64(key, val);
    else if (key == "optim.lr_g")
      cfg.lr_g = parse_f64(key, val);
    else if (key == "optim.lr_D")
      cfg.lr_D = parse_f64(key, val);
    else if (key == "train.stage_a_steps")
      cfg.stage_a_steps = parse_i64(key, val);
    else if (key == "train.stage_b_steps")
      cfg.stage_b_steps = parse_i64(key, val);
    else if (key == "train.critic_ratio")
      cfg.critic_ratio = parse_i64(key, val);
    else if (key == "train.d_ratio")
      cfg.d_ratio = parse_i64(key, val);
    else if (key == "train.eval_interval")
      cfg.eval_interval = parse_i64(key, val);
    else if (key == "train.critic_enabled")
      cfg.critic_enabled = parse_bool(key, val);
    else if (key == "train.eval_n")
      cfg.eval_n = parse_i64(key, val);
    else if (key == "train.sw2_projections")
      cfg.sw2_projections = parse_i64(key, val);
    else if (key == "seed")
      cfg.seed = static_cast<uint64_t>(parse_i64(key, val));
    else
      throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

KvConfig from_train_config(const train::TrainConfig& cfg) {
  KvConfig kv;
  using K = data::DatasetSpec::Kind;
  std::string kind;
  switch (cfg.dataset.kind) {
    case K::SwissRoll2d: kind = "swiss2d"; break;
    case K::SwissRoll3d: kind = "swiss3d"; break;
    case K::IdxFile: kind = "idx"; break;
    default:
      throw std::invalid_argument("config: dataset kind has no config spelling");
  }
  kv.set("data.kind", kind);
  kv.set("data.n", std::to_string(cfg.dataset.n));
  kv.set("data.noise", fmt_f64(cfg.dataset.noise));
  kv.set("data.seed", std::to_string(cfg.dataset.seed));
  kv.set("data.normalize", cfg.dataset.normalize ? "1" : "0");
  if (!cfg.dataset.idx_path.empty()) kv.set("data.idx_path", cfg.dataset.idx_path);
  kv.set("model.dz", std::to_string(cfg.hp.d_z));
  kv.set("model.batch", std::to_string(cfg.hp.batch));
  kv.set("model.width", std::to_string(cfg.width));
  kv.set("model.depth", std::to_string(cfg.depth));
  kv.set("hp.lambda", fmt_f64(cfg.hp.lambda));
  kv.set("hp.gamma", fmt_f64(cfg.hp.gamma));
  kv.set("hp.omega1", fmt_f64(cfg.hp.omega1));
  kv.set("hp.omega2", fmt_f64(cfg.hp.omega2));
  kv.set("hp.mu_max", fmt_f64(cfg.hp.mu_max));
  kv.set("hp.bn_eps", fmt_f64(cfg.hp.bn_eps));
  kv.set("hp.bn_rho", fmt_f64(cfg.hp.bn_rho));
  kv.set("hp.bn_enabled", cfg.hp.bn_enabled ? "1" : "0");
  kv.set("hp.leaky_slope", fmt_f64(cfg.hp.leaky_slope));
  kv.set("optim.lr_ae", fmt_f64(cfg.lr_ae));
  kv.set("optim.lr_critic", fmt_f64(cfg.lr_critic));
  kv.set("optim.lr_g", fmt_f64(cfg.lr_g));
  kv.set("optim.lr_D", fmt_f64(cfg.lr_D));
  kv.set("train.stage_a_steps", std::to_string(cfg.stage_a_steps));
  kv.set("train.stage_b_steps", std::to_string(cfg.stage_b_steps));
  kv.set("train.critic_ratio", std::to_string(cfg.critic_ratio));
  kv.set("train.d_ratio", std::to_string(cfg.d_ratio));
  kv.set("train.eval_interval", std::to_string(cfg.eval_interval));
  kv.set("train.critic_enabled", cfg.critic_enabled ? "1" : "0");
  kv.set("train.eval_n", std::to_string(cfg.eval_n));
  kv.set("train.sw2_projections", std::to_string(cfg.sw2_projections));
  kv.set("seed", std::to_string(cfg.seed));
  return kv;
}

}  // namespace lm::config
