#include "geoquery/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace geoquery {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

int to_int32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -(1LL << 31) || x >= (1LL << 31)) throw ConfigError(key + ": value out of range");
  return static_cast<int>(x);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_seed(k, v); }},
      {"steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.steps = to_int32(k, v); }},
      {"learning_rate",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.learning_rate = to_double(k, v); }},
      {"optimizer",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "gd")
           c.optimizer = Optimizer::gd;
         else if (v == "adam")
           c.optimizer = Optimizer::adam;
         else
           throw ConfigError(k + ": expected 'gd' or 'adam', got '" + v + "'");
       }},
      {"schedule",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "constant")
           c.schedule = Schedule::constant;
         else if (v == "cosine")
           c.schedule = Schedule::cosine;
         else
           throw ConfigError(k + ": expected 'constant' or 'cosine', got '" + v + "'");
       }},
      {"clip_norm", [](TrainConfig& c, const std::string& k, const std::string& v) { c.clip_norm = to_double(k, v); }},
      {"batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch = to_int32(k, v); }},
      {"severity", [](TrainConfig& c, const std::string& k, const std::string& v) { c.severity = to_double(k, v); }},
      {"window", [](TrainConfig& c, const std::string& k, const std::string& v) { c.window = to_int32(k, v); }},
      {"variant", [](TrainConfig& c, const std::string&, const std::string& v) { c.variant = parse_variant(v); }},
      {"image_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.image_size = to_int32(k, v); }},
      {"eval_pairs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_pairs = to_int32(k, v); }},
      {"eval_seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_seed = to_seed(k, v); }},
      {"tau", [](TrainConfig& c, const std::string& k, const std::string& v) { c.tau = to_double(k, v); }},
      {"lambda_recon",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.recon = to_double(k, v); }},
      {"lambda_lpips",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.lpips = to_double(k, v); }},
      {"lambda_gram",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.weights.gram = to_double(k, v); }},
      {"beta",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         std::vector<double> beta;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) beta.push_back(to_double(k, trim(item)));
         if (beta.empty()) throw ConfigError(k + ": expected a comma-separated list");
         c.weights.beta = beta;
       }},
  };
  return table;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    if (seen.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    seen[key] = number;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

TrainConfig apply_config(const std::vector<std::pair<std::string, std::string>>& entries, TrainConfig base) {
  const auto& table = setters();
  for (const auto& [key, value] : entries) {
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, key, value);
  }
  try {
    base.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return apply_config(parse_key_values(buf.str(), path), std::move(base));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : setters()) keys.push_back(e.first);
  return keys;
}

}  // namespace geoquery
