// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` configuration for TrainConfig. Lines starting with '#'
// are comments; later assignments override earlier ones, so command-line
// overrides are applied after the file.

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ilore/error.hpp"
#include "ilore/training.hpp"

namespace ilore {

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

namespace config_detail {

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::string real_str(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace config_detail

/// Every recognised key, in a stable order.
inline const std::vector<ConfigKey>& config_keys() {
  using config_detail::parse_bool;
  using config_detail::parse_real;
  using config_detail::parse_size;
  using config_detail::real_str;
#define ILORE_SIZE_KEY(key, field, text)                                              \
  ConfigKey {                                                                         \
    key, text, [](const TrainConfig& c) { return std::to_string(c.field); },          \
        [](TrainConfig& c, const std::string& v) { c.field = parse_size(key, v); }    \
  }
#define ILORE_REAL_KEY(key, field, text)                                              \
  ConfigKey {                                                                         \
    key, text, [](const TrainConfig& c) { return real_str(c.field); },                \
        [](TrainConfig& c, const std::string& v) { c.field = parse_real(key, v); }    \
  }
#define ILORE_BOOL_KEY(key, field, text)                                              \
  ConfigKey {                                                                         \
    key, text, [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.field = parse_bool(key, v); }    \
  }
  static const std::vector<ConfigKey> keys{
      ILORE_SIZE_KEY("batch_size", batch_size, "events per batch (B)"),
      ILORE_SIZE_KEY("chunk", model.chunk, "windows per batch (n)"),
      ILORE_REAL_KEY("alpha", model.alpha, "node-state decay control"),
      ILORE_REAL_KEY("initial_state", model.initial_state, "initial gate parameter"),
      ILORE_REAL_KEY("learning_rate", learning_rate, "Adam step size"),
      ILORE_SIZE_KEY("epochs", epochs, "maximum training epochs"),
      ILORE_SIZE_KEY("patience", patience, "early-stop patience on val AP (0 disables)"),
      ConfigKey{"seed", "master seed",
                [](const TrainConfig& c) { return std::to_string(c.seed); },
                [](TrainConfig& c, const std::string& v) {
                  c.seed = config_detail::parse_u64("seed", v);
                  c.model.seed = c.seed;
                }},
      ILORE_SIZE_KEY("dim", model.dim, "memory / embedding width (d)"),
      ILORE_SIZE_KEY("time_dim", model.time_dim, "time encoding width (d_t)"),
      ILORE_SIZE_KEY("edge_dim", model.edge_dim, "edge feature width (0 = from data)"),
      ILORE_SIZE_KEY("ffn_dim", model.ffn_dim, "transformer feed-forward width"),
      ILORE_SIZE_KEY("blocks", model.blocks, "transformer blocks (b)"),
      ILORE_SIZE_KEY("heads", model.heads, "transformer heads"),
      ILORE_SIZE_KEY("ranges", model.ranges, "Gaussian ranges (k)"),
      ILORE_SIZE_KEY("graph_layers", model.graph_layers, "graph layers (L)"),
      ILORE_SIZE_KEY("neighbors", model.neighbors, "recent neighbors per hop (N)"),
      ILORE_SIZE_KEY("graph_heads", model.graph_heads, "graph attention heads"),
      ILORE_REAL_KEY("inductive_fraction", inductive_fraction, "share of nodes held out"),
      ILORE_BOOL_KEY("state_module", model.state_module, "gated updates (false = w/o SM)"),
      ILORE_BOOL_KEY("gaussian_range", model.gaussian_range, "range encoding (false = w/o GRE)"),
      ILORE_BOOL_KEY("identity_attention", model.identity_attention,
                     "identity attention (false = w/o IA)"),
      ILORE_BOOL_KEY("reoccurrence", model.reoccurrence, "re-occurrence features (false = w/o ReO)"),
      ILORE_BOOL_KEY("record_timing", record_timing, "write ms_per_batch into metrics.csv"),
  };
#undef ILORE_SIZE_KEY
#undef ILORE_REAL_KEY
#undef ILORE_BOOL_KEY
  return keys;
}

/// Defaults used when no file or override is given. edge_dim 0 means "take it
/// from the data".
inline TrainConfig default_train_config() {
  TrainConfig c;
  c.model.edge_dim = 0;
  return c;
}

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("config: unknown key '" + key + "'");
}

/// "key=value" override, as given on the command line.
inline void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_config_value(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void apply_config(TrainConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  apply_config(cfg, in);
}

/// Every key with its resolved value, in key order.
inline std::vector<std::pair<std::string, std::string>> resolved_config(const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

}  // namespace ilore
