// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, eval, ablate, longterm, synth.
//
// Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric failure.
// Relative --out paths are resolved under $ILORE_OUT_ROOT when it is set.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "ilore/config.hpp"
#include "ilore/error.hpp"
#include "ilore/event_store.hpp"
#include "ilore/parameters.hpp"
#include "ilore/synth.hpp"
#include "ilore/training.hpp"

namespace ilore::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr const char* kOutRootEnv = "ILORE_OUT_ROOT";

/// Git-style blob id: SHA-1 over "blob <size>\0" followed by the bytes.
inline std::string git_blob_sha1(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path resolve_out(const std::string& out) {
  std::filesystem::path p(out);
  if (p.is_relative())
    if (const char* root = std::getenv(kOutRootEnv); root && *root) p = std::filesystem::path(root) / p;
  return p;
}

namespace detail {

struct Common {
  std::string data;
  std::string format;  // csv | jsonl | "" (from extension)
  std::string config;
  std::string manifest;
  std::vector<std::string> overrides;
  std::string out;
  std::string checkpoint;
  std::int64_t seed = -1;
};

inline EventFormat format_of(const Common& c) {
  if (c.format == "jsonl") return EventFormat::Jsonl;
  if (c.format == "csv") return EventFormat::JodieCsv;
  if (!c.format.empty()) throw ConfigError("unknown --format '" + c.format + "'");
  const std::string ext = std::filesystem::path(c.data).extension().string();
  return ext == ".jsonl" || ext == ".json" ? EventFormat::Jsonl : EventFormat::JodieCsv;
}

/// File, then manifest, then --set, then --seed.
inline TrainConfig resolve_config(Common& c) {
  TrainConfig cfg = default_train_config();
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  if (!c.manifest.empty()) {
    const auto j = nlohmann::json::parse(read_file(c.manifest));
    if (!j.contains("config") || !j["config"].is_object())
      throw ConfigError("manifest '" + c.manifest + "' has no config object");
    for (const auto& [k, v] : j["config"].items()) set_config_value(cfg, k, v.get<std::string>());
    if (c.data.empty() && j.contains("inputs") && j["inputs"].contains("data"))
      c.data = j["inputs"]["data"]["path"].get<std::string>();
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed >= 0) set_config_value(cfg, "seed", std::to_string(c.seed));
  if (c.data.empty()) throw ConfigError("--data is required");
  return cfg;
}

inline EventStream load_stream(const Common& c, TrainConfig& cfg) {
  EventStream s = parse_events(c.data, format_of(c), cfg.model.edge_dim);
  cfg.model.edge_dim = s.edge_dim;
  cfg.validate();
  return s;
}

inline std::filesystem::path prepare_out(const Common& c, const std::string& fallback) {
  const auto dir = resolve_out(c.out.empty() ? fallback : c.out);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_manifest(const std::filesystem::path& file, const std::string& command,
                           const std::vector<std::string>& argv, const TrainConfig* cfg,
                           const std::vector<std::pair<std::string, std::string>>& inputs,
                           const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["command"] = command;
  j["argv"] = argv;
  if (cfg) {
    nlohmann::json conf = nlohmann::json::object();
    for (const auto& [k, v] : resolved_config(*cfg)) conf[k] = v;
    j["config"] = conf;
    j["seed"] = cfg->seed;
  }
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [role, path] : inputs)
    in[role] = {{"path", path}, {"sha1", git_blob_sha1(read_file(path))}};
  j["inputs"] = in;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream os(file);
  os << j.dump(2) << '\n';
}

template <typename F>
inline void write_text(const std::filesystem::path& file, F&& body) {
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  body(os);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!ilore::detail::trim(item).empty()) out.push_back(ilore::detail::trim(item));
  return out;
}

inline void add_common(CLI::App* app, Common& c, bool needs_checkpoint) {
  app->add_option("--data", c.data, "event stream (JODIE CSV or JSONL)")->check(CLI::ExistingFile);
  app->add_option("--format", c.format, "csv or jsonl (default: from extension)");
  app->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  app->add_option("--manifest", c.manifest, "rerun from a previous run manifest")
      ->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "master seed (overrides config)");
  app->add_option("--out", c.out, "output directory");
  if (needs_checkpoint)
    app->add_option("--checkpoint", c.checkpoint, "trained parameters")
        ->check(CLI::ExistingFile)
        ->required();
}

inline std::string defaults_footer() {
  std::ostringstream os;
  os << "Config keys (defaults):\n";
  const TrainConfig d = default_train_config();
  for (const auto& k : config_keys()) os << "  " << k.name << " = " << k.get(d) << "    # " << k.help << '\n';
  os << "Output root: $" << kOutRootEnv << " prefixes relative --out paths.\n";
  os << "Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric.\n";
  return os.str();
}

}  // namespace detail

/// Runs one command. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  using detail::Common;
  CLI::App app{"iLoRE: continuous-time dynamic graph link prediction", "ilore"};
  app.footer(detail::defaults_footer());
  app.require_subcommand(1);

  Common train_c, eval_c, ablate_c, long_c;
  auto* train = app.add_subcommand("train", "train on a stream; writes checkpoint, metrics.csv, manifest");
  detail::add_common(train, train_c, false);

  auto* eval = app.add_subcommand("eval", "score val/test with a checkpoint");
  detail::add_common(eval, eval_c, true);
  bool classify = false;
  eval->add_flag("--classify", classify, "also fit a node-classification head on state labels");

  auto* ablate = app.add_subcommand("ablate", "train the full model and ablation variants");
  detail::add_common(ablate, ablate_c, false);
  std::string variants;
  ablate->add_option("--variants", variants, "comma list from SM,GRE,IA,ReO (empty: full only)");

  auto* longterm = app.add_subcommand("longterm", "AP on top-frequency subgraphs + chi-square test");
  detail::add_common(longterm, long_c, false);
  std::string fractions = "1,0.8,0.6,0.4,0.2,0.1";
  longterm->add_option("--fractions", fractions, "comma list of top-node fractions")
      ->capture_default_str();
  longterm->add_option("--checkpoint", long_c.checkpoint, "trained parameters (default: train first)")
      ->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "write a synthetic JODIE CSV stream");
  std::string generator = "periodic", synth_out;
  PeriodicSpec ps;
  ReoccurrenceSpec rs;
  std::size_t users = 20, items = 10, events = 2000;
  std::uint64_t synth_seed = 1;
  double rho = 0.8, eta = 0.3;
  synth->add_option("--generator", generator, "periodic | reoccurrence | noisy")
      ->check(CLI::IsMember({"periodic", "reoccurrence", "noisy"}))
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output CSV file")->required();
  synth->add_option("--users", users, "user count")->capture_default_str();
  synth->add_option("--items", items, "item count")->capture_default_str();
  synth->add_option("--events", events, "event count")->capture_default_str();
  synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
  synth->add_option("--cycle", ps.cycle_len, "items per user cycle (periodic, noisy)")
      ->capture_default_str();
  synth->add_option("--edge-dim", ps.edge_dim, "item code width (periodic, noisy)")
      ->capture_default_str();
  synth->add_option("--rho", rho, "repeat probability (reoccurrence)")->capture_default_str();
  synth->add_option("--eta", eta, "noise share (noisy)")->capture_default_str();

  std::vector<std::string> argv_store{"ilore"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kExitOk;
    err << app.help();
    return kExitUsage;
  }

  try {
    if (*train) {
      TrainConfig cfg = detail::resolve_config(train_c);
      EventStream s = detail::load_stream(train_c, cfg);
      const auto dir = detail::prepare_out(train_c, "runs/train");
      const Splits sp = split_temporal(s, {}, cfg.inductive_fraction, cfg.seed);
      Model model(cfg.model);
      const FitResult f = fit(model, s, sp, cfg, [&](const MetricsRow& r) {
        out << "epoch " << r.epoch << ' ' << r.split << " loss " << r.loss << " AP " << r.ap
            << " skip " << r.skip_rate << '\n';
      });
      save_checkpoint(model.parameters(), (dir / "checkpoint.bin").string());
      detail::write_text(dir / "metrics.csv",
                         [&](std::ostream& os) { write_metrics_csv(os, f.rows, cfg.record_timing); });
      detail::write_text(dir / "timing.csv", [&](std::ostream& os) {
        os << "epoch,split,ms_per_batch\n";
        for (const auto& r : f.rows) os << r.epoch << ',' << r.split << ',' << r.ms_per_batch << '\n';
      });
      detail::write_manifest(dir / "manifest.json", "train", args, &cfg, {{"data", train_c.data}},
                             {{"best_epoch", f.best_epoch}, {"test_ap", f.test_ap}});
      out << "test AP " << f.test_ap << " -> " << dir.string() << '\n';
      return kExitOk;
    }
    if (*eval) {
      TrainConfig cfg = detail::resolve_config(eval_c);
      EventStream s = detail::load_stream(eval_c, cfg);
      const auto dir = detail::prepare_out(eval_c, "runs/eval");
      const Splits sp = split_temporal(s, {}, cfg.inductive_fraction, cfg.seed);
      Model model(cfg.model);
      load_checkpoint(model.parameters(), eval_c.checkpoint);
      FitResult f;
      evaluate_final(model, s, sp, cfg, f);
      detail::write_text(dir / "metrics.csv",
                         [&](std::ostream& os) { write_metrics_csv(os, f.rows, cfg.record_timing); });
      nlohmann::json extra{{"test_ap", f.test_ap}};
      if (classify) {
        const ClassificationResult c = classify_nodes(model, s, sp, cfg);
        detail::write_text(dir / "classification.csv", [&](std::ostream& os) {
          os << "split,AUC,train_examples,test_examples\ntest," << c.test_auc << ','
             << c.train_examples << ',' << c.test_examples << '\n';
        });
        extra["classification_auc"] = c.test_auc;
        out << "node classification AUC " << c.test_auc << '\n';
      }
      detail::write_manifest(dir / "manifest.json", "eval", args, &cfg,
                             {{"data", eval_c.data}, {"checkpoint", eval_c.checkpoint}}, extra);
      out << "test AP " << f.test_ap << '\n';
      return kExitOk;
    }
    if (*ablate) {
      TrainConfig cfg = detail::resolve_config(ablate_c);
      EventStream s = detail::load_stream(ablate_c, cfg);
      const auto dir = detail::prepare_out(ablate_c, "runs/ablate");
      const Splits sp = split_temporal(s, {}, cfg.inductive_fraction, cfg.seed);
      const auto rows = ilore::ablate(s, sp, cfg, detail::split_list(variants));
      detail::write_text(dir / "ablation.csv", [&](std::ostream& os) { write_ablation_csv(os, rows); });
      detail::write_manifest(dir / "manifest.json", "ablate", args, &cfg, {{"data", ablate_c.data}});
      for (const auto& r : rows) out << r.variant << ' ' << r.split << " AP " << r.ap << '\n';
      return kExitOk;
    }
    if (*longterm) {
      TrainConfig cfg = detail::resolve_config(long_c);
      EventStream s = detail::load_stream(long_c, cfg);
      const auto dir = detail::prepare_out(long_c, "runs/longterm");
      Model model(cfg.model);
      std::vector<std::pair<std::string, std::string>> inputs{{"data", long_c.data}};
      if (!long_c.checkpoint.empty()) {
        load_checkpoint(model.parameters(), long_c.checkpoint);
        inputs.emplace_back("checkpoint", long_c.checkpoint);
      } else {
        fit(model, s, split_temporal(s, {}, cfg.inductive_fraction, cfg.seed), cfg);
      }
      std::vector<double> fr;
      for (const auto& f : detail::split_list(fractions)) {
        const double v = std::stod(f);
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError("fraction " + f + " outside (0, 1]");
        fr.push_back(v);
      }
      const LongTermResult res = longterm_experiment(model, s, cfg, fr);
      detail::write_text(dir / "longterm.csv", [&](std::ostream& os) {
        os << "fraction,events,trials,successes,failures,AP\n";
        for (const auto& c : res.columns)
          os << c.fraction << ',' << c.events << ',' << c.trials << ',' << c.successes << ','
             << c.trials - c.successes << ',' << c.ap << '\n';
      });
      nlohmann::json extra{{"dropped_fractions", res.dropped}};
      if (res.p_value) extra["p_value"] = *res.p_value;
      else extra["p_value_undefined"] = res.note;
      detail::write_manifest(dir / "manifest.json", "longterm", args, &cfg, inputs, extra);
      for (double f : res.dropped) out << "fraction " << f << " dropped: empty subgraph\n";
      if (res.p_value) out << "chi-square p-value " << *res.p_value << '\n';
      else out << "chi-square p-value undefined: " << res.note << '\n';
      return kExitOk;
    }
    if (*synth) {
      SyntheticStream s;
      if (generator == "reoccurrence") {
        rs.users = users;
        rs.items = items;
        rs.events = events;
        rs.repeat = rho;
        rs.seed = synth_seed;
        s = reoccurrence_heavy(rs);
      } else {
        ps.users = users;
        ps.items = items;
        ps.events = events;
        ps.seed = synth_seed;
        ps.noise_rate = generator == "noisy" ? eta : 0.0;
        s = periodic_bipartite(ps);
      }
      const auto file = resolve_out(synth_out);
      if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
      detail::write_text(file, [&](std::ostream& os) { write_synthetic_csv(s, os); });
      std::size_t noisy = 0;
      for (bool b : s.noise) noisy += b ? 1 : 0;
      detail::write_manifest(std::filesystem::path(file.string() + ".manifest.json"), "synth", args,
                             nullptr, {}, {{"generator", generator}, {"events", s.stream.size()},
                                           {"noise_events", noisy}, {"output", file.string()}});
      out << "wrote " << s.stream.size() << " events to " << file.string() << '\n';
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    err << "manifest error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace ilore::cli
