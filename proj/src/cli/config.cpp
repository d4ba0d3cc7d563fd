#include "lsmtcr/cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace lsmtcr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = {
      // general
      "seed", "preset", "out", "chain",
      // inputs
      "corpus", "pairs", "encoder", "decoder", "beta_checkpoint", "assembler", "epitopes", "input", "source",
      "generated", "reference", "assembled", "dataset",
      // training
      "epochs", "batch_size", "lr", "weight_decay", "warmup", "freeze",
      // architecture overrides
      "d_model", "heads", "d_head", "layers", "d_ff", "max_len", "dropout", "time_embedding",
      // diffusion schedule
      "T", "p_min", "p_max",
      // sampling
      "temperature", "samples", "max_cdr3_len"};
  return keys;
}

RunConfig RunConfig::parse(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      cfg.set_assignment(line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput(path);
  return parse(in, path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::text(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string RunConfig::require_text(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) throw ConfigError("config key '" + key + "' is required");
  return it->second;
}

std::size_t RunConfig::count(const std::string& key, std::size_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer, got '" + v + "'");
  }
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::out_of_range&) {
    throw ConfigError("config key '" + key + "' is out of range");
  }
}

std::uint64_t RunConfig::seed() const { return count("seed", 0); }

double RunConfig::real(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("config key '" + key + "' must be a number, got '" + it->second + "'");
  }
}

std::vector<double> RunConfig::reals(const std::string& key, const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + key + "' must be a comma-separated list of numbers");
    }
  }
  if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
  return out;
}

std::filesystem::path RunConfig::input(const std::string& key) const {
  const std::filesystem::path p = require_text(key);
  if (!std::filesystem::exists(p)) throw MissingInput(p);
  return p;
}

}  // namespace lsmtcr::cli
