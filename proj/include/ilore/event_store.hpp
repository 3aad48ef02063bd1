// SPDX-License-Identifier: Apache-2.0
//
// Timestamped edge streams: parsing, temporal splits, neighbor history with
// re-occurrence counts, and frequency-filtered subgraphs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ilore/error.hpp"
#include "ilore/rng.hpp"

namespace ilore {

using NodeId = std::uint32_t;

struct Event {
  NodeId src = 0;
  NodeId dst = 0;
  double t = 0.0;
  std::vector<double> edge_feat;
  std::optional<int> label;
};

struct EventStream {
  std::vector<Event> events;
  std::size_t num_nodes = 0;
  std::size_t edge_dim = 0;

  std::size_t size() const { return events.size(); }
  bool has_labels() const {
    return std::any_of(events.begin(), events.end(), [](const Event& e) { return e.label; });
  }
};

enum class EventFormat { JodieCsv, Jsonl };

namespace detail {

// Users and items live in separate id spaces in the JODIE release, so the
// dense index is keyed on (role, raw id).
class NodeIndexer {
 public:
  NodeId operator()(char role, const std::string& raw) {
    auto [it, inserted] = ids_.emplace(std::string(1, role) + raw, static_cast<NodeId>(ids_.size()));
    return it->second;
  }
  std::size_t size() const { return ids_.size(); }

 private:
  std::unordered_map<std::string, NodeId> ids_;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& field, std::size_t line, const char* what) {
  const std::string f = trim(field);
  if (f.empty()) throw ParseError(line, std::string("empty ") + what);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(f, &pos);
  } catch (const std::exception&) {
    throw ParseError(line, std::string("bad ") + what + " '" + f + "'");
  }
  if (pos != f.size() || !std::isfinite(v))
    throw ParseError(line, std::string("bad ") + what + " '" + f + "'");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct RawRow {
  std::string user, item;
  double t;
  std::optional<int> label;
  std::vector<double> feat;
  std::size_t line;
};

inline std::string json_id(const nlohmann::json& v, std::size_t line, const char* key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream os;
    os << v.get<double>();
    return os.str();
  }
  throw ParseError(line, std::string("bad ") + key);
}

inline EventStream finish_stream(std::vector<RawRow> rows, std::size_t edge_dim) {
  std::size_t inferred = edge_dim;
  for (const auto& r : rows) {
    if (r.feat.empty()) continue;
    if (inferred == 0) inferred = r.feat.size();
    if (r.feat.size() != inferred)
      throw ParseError(r.line, "expected " + std::to_string(inferred) + " edge features, got " +
                                   std::to_string(r.feat.size()));
  }
  if (inferred == 0) inferred = 1;

  EventStream s;
  s.edge_dim = inferred;
  NodeIndexer index;
  double last_t = -std::numeric_limits<double>::infinity();
  for (auto& r : rows) {
    if (r.t < 0.0) throw ParseError(r.line, "negative timestamp");
    if (r.t < last_t)
      throw OrderingError("line " + std::to_string(r.line) + ": timestamp " + std::to_string(r.t) +
                          " precedes " + std::to_string(last_t));
    last_t = r.t;
    Event e;
    e.src = index('u', r.user);
    e.dst = index('i', r.item);
    e.t = r.t;
    e.label = r.label;
    e.edge_feat = r.feat.empty() ? std::vector<double>(inferred, 0.0) : std::move(r.feat);
    s.events.push_back(std::move(e));
  }
  s.num_nodes = index.size();
  return s;
}

}  // namespace detail

/// Reads a JODIE CSV (header, then `user_id,item_id,timestamp,state_label,f1..f_de`)
/// or JSONL stream (objects with the same keys). `edge_dim` = 0 infers the
/// feature width from the data; rows without features are zero-filled.
inline EventStream parse_events(std::istream& in, EventFormat format, std::size_t edge_dim = 0) {
  std::vector<detail::RawRow> rows;
  std::string line;
  std::size_t lineno = 0;
  if (format == EventFormat::JodieCsv) {
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      auto f = detail::split_csv(line);
      if (f.size() < 3) throw ParseError(lineno, "expected at least 3 fields, got " + std::to_string(f.size()));
      detail::RawRow r;
      r.line = lineno;
      r.user = detail::trim(f[0]);
      r.item = detail::trim(f[1]);
      if (r.user.empty() || r.item.empty()) throw ParseError(lineno, "empty node id");
      r.t = detail::parse_real(f[2], lineno, "timestamp");
      if (f.size() > 3 && !detail::trim(f[3]).empty()) {
        const double lv = detail::parse_real(f[3], lineno, "state_label");
        if (lv != std::floor(lv)) throw ParseError(lineno, "non-integer state_label");
        r.label = static_cast<int>(lv);
      }
      bool any_feature = false;
      for (std::size_t k = 4; k < f.size(); ++k) any_feature = any_feature || !detail::trim(f[k]).empty();
      if (any_feature)
        for (std::size_t k = 4; k < f.size(); ++k)
          r.feat.push_back(detail::parse_real(f[k], lineno, "edge feature"));
      rows.push_back(std::move(r));
    }
  } else {
    while (std::getline(in, line)) {
      ++lineno;
      if (detail::trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& ex) {
        throw ParseError(lineno, std::string("invalid JSON: ") + ex.what());
      }
      if (!j.is_object() || !j.contains("user_id") || !j.contains("item_id") ||
          !j.contains("timestamp"))
        throw ParseError(lineno, "object needs user_id, item_id, timestamp");
      detail::RawRow r;
      r.line = lineno;
      r.user = detail::json_id(j["user_id"], lineno, "user_id");
      r.item = detail::json_id(j["item_id"], lineno, "item_id");
      if (!j["timestamp"].is_number()) throw ParseError(lineno, "timestamp must be a number");
      r.t = j["timestamp"].get<double>();
      if (j.contains("state_label") && !j["state_label"].is_null()) {
        if (!j["state_label"].is_number_integer()) throw ParseError(lineno, "bad state_label");
        r.label = j["state_label"].get<int>();
      }
      for (std::size_t k = 1;; ++k) {
        const std::string key = "f" + std::to_string(k);
        if (!j.contains(key)) break;
        if (!j[key].is_number()) throw ParseError(lineno, "bad " + key);
        r.feat.push_back(j[key].get<double>());
      }
      rows.push_back(std::move(r));
    }
  }
  return detail::finish_stream(std::move(rows), edge_dim);
}

inline EventStream parse_events(const std::string& path, EventFormat format, std::size_t edge_dim = 0) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_events(in, format, edge_dim);
}

/// Writes JODIE CSV with dense ids (users and items both numbered from their
/// own dense index). Reals use 17 significant digits so a reparse is exact.
inline void write_jodie_csv(const EventStream& s, std::ostream& os,
                            const std::vector<NodeId>& user_id_of = {},
                            const std::vector<NodeId>& item_id_of = {}) {
  os << "user_id,item_id,timestamp,state_label";
  for (std::size_t k = 1; k <= s.edge_dim; ++k) os << ",f" << k;
  os << '\n';
  char buf[64];
  for (const auto& e : s.events) {
    os << (user_id_of.empty() ? e.src : user_id_of[e.src]) << ','
       << (item_id_of.empty() ? e.dst : item_id_of[e.dst]) << ',';
    std::snprintf(buf, sizeof buf, "%.17g", e.t);
    os << buf << ',' << e.label.value_or(0);
    for (double f : e.edge_feat) {
      std::snprintf(buf, sizeof buf, "%.17g", f);
      os << ',' << buf;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------- splits

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct Splits {
  std::vector<std::size_t> train;  // event indices, time order, inductive-filtered
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
  std::set<NodeId> inductive;

  bool touches_inductive(const Event& e) const {
    return inductive.count(e.src) || inductive.count(e.dst);
  }
};

inline Splits split_temporal(const EventStream& s, SplitRatios ratios = {},
                             double inductive_fraction = 0.1, std::uint64_t seed = 0) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 ||
      ratios.val < 0 || ratios.test < 0)
    throw ConfigError("split ratios must be non-negative and sum to 1");
  if (!(inductive_fraction >= 0.0 && inductive_fraction < 1.0))
    throw ConfigError("inductive_fraction must lie in [0, 1)");

  const std::size_t r = s.size();
  auto boundary = [r](double frac) {
    return std::min(r, static_cast<std::size_t>(std::floor(frac * static_cast<double>(r) + 1e-9)));
  };
  Splits out;
  const std::size_t b1 = boundary(ratios.train);
  const std::size_t b2 = boundary(ratios.train + ratios.val);
  out.val_begin = b1;
  out.val_end = b2;
  out.test_begin = b2;
  out.test_end = r;

  const auto k = static_cast<std::size_t>(
      std::floor(inductive_fraction * static_cast<double>(s.num_nodes) + 1e-9));
  if (k > 0) {
    std::vector<bool> in_train(s.num_nodes, false), after(s.num_nodes, false);
    for (std::size_t i = 0; i < r; ++i) {
      auto& flag = i < b1 ? in_train : after;
      flag[s.events[i].src] = flag[s.events[i].dst] = true;
    }
    std::vector<NodeId> fresh, seen_late, rest;
    for (NodeId v = 0; v < s.num_nodes; ++v) {
      if (after[v] && !in_train[v])
        fresh.push_back(v);
      else if (after[v])
        seen_late.push_back(v);
      else
        rest.push_back(v);
    }
    Rng rng(seed);
    auto shuffle = [&rng](std::vector<NodeId>& v) {
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
    };
    shuffle(fresh);
    shuffle(seen_late);
    shuffle(rest);
    for (const auto* pool : {&fresh, &seen_late, &rest})
      for (NodeId v : *pool)
        if (out.inductive.size() < k) out.inductive.insert(v);
  }
  for (std::size_t i = 0; i < b1; ++i)
    if (!out.touches_inductive(s.events[i])) out.train.push_back(i);
  return out;
}

// ---------------------------------------------------------------- neighbor history

struct NeighborEntry {
  NodeId neighbor;
  double t;
  std::size_t record;    // index into the feature pool
  std::uint32_t count;   // pairwise re-occurrence count at t (1 for the first interaction)
};

/// Per-node interaction history. Writes must arrive in non-decreasing time;
/// reads are safe between writes.
class NeighborStore {
 public:
  NeighborStore(std::size_t num_nodes, std::size_t edge_dim)
      : lists_(num_nodes), last_time_(num_nodes, 0.0), edge_dim_(edge_dim) {}

  void record_event(const Event& e) {
    if (e.t < latest_) throw OrderingError("record_event: time " + std::to_string(e.t) +
                                           " precedes " + std::to_string(latest_));
    if (e.src >= lists_.size() || e.dst >= lists_.size())
      throw ContractError("record_event: node id out of range");
    if (e.edge_feat.size() != edge_dim_)
      throw DimensionError("record_event: edge feature width " + std::to_string(e.edge_feat.size()));
    latest_ = e.t;
    const std::size_t rec = records_++;
    features_.insert(features_.end(), e.edge_feat.begin(), e.edge_feat.end());
    const std::uint32_t c = ++pair_counts_[pair_key(e.src, e.dst)];
    lists_[e.src].push_back({e.dst, e.t, rec, c});
    if (e.dst != e.src) lists_[e.dst].push_back({e.src, e.t, rec, c});
    last_time_[e.src] = last_time_[e.dst] = e.t;
  }

  /// At most `n` most recent entries of node i strictly before t, oldest first.
  std::span<const NeighborEntry> recent_neighbors(NodeId i, double t, std::size_t n) const {
    if (n == 0) throw ContractError("recent_neighbors: n must be >= 1");
    const auto& list = lists_.at(i);
    auto end = std::lower_bound(list.begin(), list.end(), t,
                                [](const NeighborEntry& e, double tt) { return e.t < tt; });
    const auto count = static_cast<std::size_t>(end - list.begin());
    const std::size_t take = std::min(n, count);
    return {list.data() + (count - take), take};
  }

  std::span<const double> features(std::size_t record) const {
    return {features_.data() + record * edge_dim_, edge_dim_};
  }

  std::uint32_t pair_count(NodeId a, NodeId b) const {
    auto it = pair_counts_.find(pair_key(a, b));
    return it == pair_counts_.end() ? 0 : it->second;
  }

  double last_event_time(NodeId i) const { return last_time_.at(i); }
  std::size_t num_nodes() const { return lists_.size(); }
  std::size_t edge_dim() const { return edge_dim_; }
  std::size_t history_size(NodeId i) const { return lists_.at(i).size(); }

 private:
  static std::uint64_t pair_key(NodeId a, NodeId b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  std::vector<std::vector<NeighborEntry>> lists_;
  std::vector<double> last_time_;
  std::vector<double> features_;
  std::unordered_map<std::uint64_t, std::uint32_t> pair_counts_;
  std::size_t edge_dim_;
  std::size_t records_ = 0;
  double latest_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------- frequency subgraphs

/// Events whose endpoints both rank in the top `top_fraction` of nodes by edge
/// count (ties to the lower id). Node indexing is preserved.
inline EventStream frequency_subgraph(const EventStream& s, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0))
    throw ContractError("frequency_subgraph: top_fraction must lie in (0, 1]");
  std::vector<std::size_t> freq(s.num_nodes, 0);
  for (const auto& e : s.events) {
    ++freq[e.src];
    if (e.dst != e.src) ++freq[e.dst];
  }
  std::vector<NodeId> order(s.num_nodes);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::stable_sort(order.begin(), order.end(),
                   [&freq](NodeId a, NodeId b) { return freq[a] > freq[b]; });
  const auto keep = static_cast<std::size_t>(
      std::floor(top_fraction * static_cast<double>(s.num_nodes) + 1e-9));
  std::vector<bool> top(s.num_nodes, false);
  for (std::size_t k = 0; k < std::max<std::size_t>(keep, 1) && k < order.size(); ++k) top[order[k]] = true;

  EventStream out;
  out.num_nodes = s.num_nodes;
  out.edge_dim = s.edge_dim;
  for (const auto& e : s.events)
    if (top[e.src] && top[e.dst]) out.events.push_back(e);
  return out;
}

}  // namespace ilore
