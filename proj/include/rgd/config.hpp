#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgd/checkpoint.hpp"

namespace rgd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  const char* name;
  const char* help;
};

/// Every key the tools read. Anything else in a config file is reported as unknown.
inline const std::vector<ConfigKey>& documented_keys() {
  static const std::vector<ConfigKey> keys = {
      {"schedule.T", "number of diffusion steps"},
      {"schedule.beta_start", "first noise rate of the linear schedule"},
      {"schedule.beta_end", "last noise rate of the linear schedule"},
      {"sample.steps", "respaced sampling steps"},
      {"data.size", "ShapesToy image side"},
      {"data.per_class", "training images per class"},
      {"data.val_per_class", "validation images per class"},
      {"diffusion.iterations", "denoiser optimizer steps"},
      {"diffusion.batch", "denoiser batch size"},
      {"diffusion.lr_start", "denoiser initial learning rate"},
      {"diffusion.lr_end", "denoiser final learning rate"},
      {"diffusion.weight_decay", "denoiser decoupled weight decay"},
      {"diffusion.null_prob", "probability of training on the null label"},
      {"diffusion.checkpoint_every", "intermediate checkpoint interval, 0 for none"},
      {"diffusion.width1", "denoiser channels at full resolution"},
      {"diffusion.width2", "denoiser channels at half resolution"},
      {"diffusion.width3", "denoiser channels at quarter resolution"},
      {"diffusion.embed", "time embedding size"},
      {"classifier.iterations", "classifier optimizer steps"},
      {"classifier.batch", "classifier batch size"},
      {"classifier.lr_start", "classifier initial learning rate"},
      {"classifier.lr_end", "classifier final learning rate"},
      {"classifier.weight_decay", "classifier decoupled weight decay"},
      {"classifier.clean_only", "train on t = 0 only (feature extractor / judge)"},
      {"classifier.eval_every", "noisy validation accuracy interval, 0 for none"},
      {"classifier.checkpoint_every", "intermediate checkpoint interval, 0 for none"},
      {"classifier.width1", "classifier first conv channels"},
      {"classifier.width2", "classifier second conv channels (feature size)"},
      {"classifier.embed", "time embedding size"},
      {"attack.norm", "l2 or linf"},
      {"attack.eps", "threat radius"},
      {"attack.steps", "PGD iterations"},
      {"attack.step_size", "optional PGD step; default rule applies when absent"},
      {"attack.early_stop", "stop a sample once it is misclassified"},
      {"attack.random_start", "random initial perturbation inside the ball"},
      {"guidance.scale", "default guidance scale"},
      {"guidance.batch", "samples per denoiser batch"},
      {"guidance.conditional", "feed the class label to the denoiser (false: null label)"},
      {"eval.k", "nearest neighbour for precision/recall"},
      {"eval.count", "generated samples per evaluation"},
      {"sweep.scales", "comma separated guidance scales"},
      {"classmax.eps", "L2 radius for class maximization"},
      {"classmax.steps", "targeted PGD iterations"},
      {"gradviz.timesteps", "comma separated timesteps for gradient grids"},
  };
  return keys;
}

inline bool is_documented(const std::string& key) {
  const auto& keys = documented_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& k) { return key == k.name; });
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Flat key = value map. Lookups of missing keys fail; defaults are the caller's business.
class ExperimentConfig {
 public:
  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>") {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
      if (key.find_first_of(" \t") != std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(number) + ": key contains whitespace");
      if (c.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key " + key);
      c.values_[key] = value;
    }
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
  }

  /// Applies a "key=value" override.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError("--set with empty key");
    values_[key] = trim(assignment.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key: " + key);
    return it->second;
  }

  double real(const std::string& key) const { return to_real(key, str(key)); }

  long integer(const std::string& key) const {
    const std::string& v = str(key);
    long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config key " + key + ": not an integer: " + v);
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected true or false, got " + v);
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(str(key));
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_real(key, trim(item)));
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
  }

  std::vector<int> integers(const std::string& key) const {
    std::vector<int> out;
    for (double v : reals(key)) {
      if (v != std::floor(v)) throw ConfigError("config key " + key + ": expected integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  std::optional<double> optional_real(const std::string& key) const {
    return has(key) ? std::optional<double>(real(key)) : std::nullopt;
  }

  std::vector<std::string> unknown_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!is_documented(k)) out.push_back(k);
    return out;
  }

  void warn_unknown(std::ostream& err) const {
    for (const auto& k : unknown_keys()) err << "warning: unknown config key '" << k << "'\n";
  }

  /// Sorted "key = value" lines.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static double to_real(const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not a number: " + v);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace rgd
