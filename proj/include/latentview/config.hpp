// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value config files and the resolved application config the CLI
// works from. Precedence: built-in defaults, then preset, then config file,
// then explicit command-line flags.

#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/common.hpp"
#include "latentview/fusion.hpp"
#include "latentview/prior.hpp"
#include "latentview/training.hpp"

namespace latentview {

// Lines of `key = value`; '#' starts a comment; blank lines ignored.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    int lineno = 0;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      cfg.entries_[key] = val;
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    try {
      return parse(read_file(path));
    } catch (const DataError& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

namespace detail {

inline long long config_int(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + val + "'");
  }
}

inline double config_double(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + val + "'");
  }
}

}  // namespace detail

struct AppConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::string cache_dir = "cache";
  std::string data_root = "data/train";
  std::string test_root;
  std::string out_dir = "runs/latest";

  int t_star = 600;
  int steps = 30;

  // training (mirrors TrainConfig)
  int batch_size = 8;
  double learning_rate = 3e-4;
  int epochs = 50;
  int checkpoint_every = 10;
  int pairs_per_scene = 6;
  double generic_substitution = 0.1;
  int ref_lo = 1, ref_hi = 10, tar_lo = 15, tar_hi = 25;

  // synthetic data
  int num_scenes = 50;
  int frames_per_scene = 30;
  int image_size = 128;
  double arc_degrees = 120.0;

  // fusion / evaluation
  std::string strategy = "both";
  std::string coefficient_sign = "minus";
  std::string selector = "psnr";
  int protocol_resize = 90;
  int eval_pairs_per_scene = 4;
  std::uint64_t eval_seed = 1234;

  // prior provisioning
  std::string prior = "toy";  // toy | zero | external
  std::string prior_path;     // toy weights or external locator; empty = <cache_dir>/toy_prior.tunc
  int prior_width = 48;
  int prior_depth = 2;
  int prior_train_steps = 2000;
  int prior_batch = 16;
  double prior_lr = 2e-3;

  static AppConfig with_preset(const std::string& name) {
    AppConfig c;
    c.apply_preset(name);
    return c;
  }

  void apply_preset(const std::string& name) {
    preset = name;
    if (name == "desk") {
      const TrainConfig t = TrainConfig::desk();
      batch_size = t.batch_size;
      learning_rate = t.learning_rate;
      epochs = t.epochs;
      pairs_per_scene = t.pairs_per_scene;
      num_scenes = 50;
      frames_per_scene = 30;
      image_size = 128;
    } else if (name == "paper") {
      const TrainConfig t = TrainConfig::paper();
      batch_size = t.batch_size;
      learning_rate = t.learning_rate;
      epochs = t.epochs;
      pairs_per_scene = t.pairs_per_scene;
      image_size = 512;
    } else {
      throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
    }
  }

  void apply_file(const KeyValueConfig& cfg) {
    // The preset resets whole blocks, so it always applies before the
    // individual keys regardless of where it sits in the file.
    if (auto it = cfg.entries().find("preset"); it != cfg.entries().end())
      apply_preset(it->second);
    for (const auto& [key, val] : cfg.entries()) {
      if (key == "preset") continue;
      else if (key == "seed") seed = static_cast<std::uint64_t>(detail::config_int(key, val));
      else if (key == "cache_dir") cache_dir = val;
      else if (key == "data_root") data_root = val;
      else if (key == "test_root") test_root = val;
      else if (key == "out_dir") out_dir = val;
      else if (key == "t_star") t_star = static_cast<int>(detail::config_int(key, val));
      else if (key == "steps") steps = static_cast<int>(detail::config_int(key, val));
      else if (key == "batch_size") batch_size = static_cast<int>(detail::config_int(key, val));
      else if (key == "learning_rate") learning_rate = detail::config_double(key, val);
      else if (key == "epochs") epochs = static_cast<int>(detail::config_int(key, val));
      else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(detail::config_int(key, val));
      else if (key == "pairs_per_scene") pairs_per_scene = static_cast<int>(detail::config_int(key, val));
      else if (key == "generic_substitution") generic_substitution = detail::config_double(key, val);
      else if (key == "ref_lo") ref_lo = static_cast<int>(detail::config_int(key, val));
      else if (key == "ref_hi") ref_hi = static_cast<int>(detail::config_int(key, val));
      else if (key == "tar_lo") tar_lo = static_cast<int>(detail::config_int(key, val));
      else if (key == "tar_hi") tar_hi = static_cast<int>(detail::config_int(key, val));
      else if (key == "num_scenes") num_scenes = static_cast<int>(detail::config_int(key, val));
      else if (key == "frames_per_scene") frames_per_scene = static_cast<int>(detail::config_int(key, val));
      else if (key == "image_size") image_size = static_cast<int>(detail::config_int(key, val));
      else if (key == "arc_degrees") arc_degrees = detail::config_double(key, val);
      else if (key == "strategy") strategy = val;
      else if (key == "coefficient_sign") coefficient_sign = val;
      else if (key == "selector") selector = val;
      else if (key == "protocol_resize") protocol_resize = static_cast<int>(detail::config_int(key, val));
      else if (key == "eval_pairs_per_scene") eval_pairs_per_scene = static_cast<int>(detail::config_int(key, val));
      else if (key == "eval_seed") eval_seed = static_cast<std::uint64_t>(detail::config_int(key, val));
      else if (key == "prior") prior = val;
      else if (key == "prior_path") prior_path = val;
      else if (key == "prior_width") prior_width = static_cast<int>(detail::config_int(key, val));
      else if (key == "prior_depth") prior_depth = static_cast<int>(detail::config_int(key, val));
      else if (key == "prior_train_steps") prior_train_steps = static_cast<int>(detail::config_int(key, val));
      else if (key == "prior_batch") prior_batch = static_cast<int>(detail::config_int(key, val));
      else if (key == "prior_lr") prior_lr = detail::config_double(key, val);
      else throw ConfigError("unknown config key '" + key + "'");
    }
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    t.epochs = epochs;
    t.t_star = t_star;
    t.steps = steps;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    t.pairs_per_scene = pairs_per_scene;
    t.ranges = PairRanges{ref_lo, ref_hi, tar_lo, tar_hi};
    t.generic_substitution = generic_substitution;
    t.out_dir = out_dir;
    t.validate();
    return t;
  }

  FusionConfig fusion_config() const {
    FusionConfig f;
    if (strategy == "a") f.strategy = FusionStrategy::kA;
    else if (strategy == "b") f.strategy = FusionStrategy::kB;
    else if (strategy == "both") f.strategy = FusionStrategy::kBoth;
    else throw ConfigError("strategy must be a, b, or both (got '" + strategy + "')");
    if (coefficient_sign == "plus") f.sign = CoefficientSign::kPlus;
    else if (coefficient_sign == "minus") f.sign = CoefficientSign::kMinus;
    else throw ConfigError("coefficient_sign must be plus or minus (got '" + coefficient_sign + "')");
    f.t_star = t_star;
    f.selector = selector;
    return f;
  }

  nlohmann::json to_json() const {
    return {{"preset", preset},
            {"seed", seed},
            {"cache_dir", cache_dir},
            {"data_root", data_root},
            {"test_root", test_root},
            {"out_dir", out_dir},
            {"t_star", t_star},
            {"steps", steps},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"epochs", epochs},
            {"checkpoint_every", checkpoint_every},
            {"pairs_per_scene", pairs_per_scene},
            {"generic_substitution", generic_substitution},
            {"num_scenes", num_scenes},
            {"frames_per_scene", frames_per_scene},
            {"strategy", strategy},
            {"coefficient_sign", coefficient_sign},
            {"selector", selector},
            {"protocol_resize", protocol_resize},
            {"prior", prior}};
  }
};

}  // namespace latentview
