// SPDX-License-Identifier: Apache-2.0
//
// Synthetic bipartite event streams. Users are nodes 0..U-1 and items are
// U..U+I-1; timestamps are strictly increasing.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "ilore/error.hpp"
#include "ilore/event_store.hpp"
#include "ilore/rng.hpp"

namespace ilore {

struct SyntheticStream {
  EventStream stream;
  std::size_t users = 0;
  std::size_t items = 0;
  std::vector<bool> noise;  // per event: drawn uniformly at random rather than from the pattern
};

struct PeriodicSpec {
  std::size_t users = 20;
  std::size_t items = 10;
  std::size_t events = 2000;
  std::size_t cycle_len = 3;   // items per user cycle (distinct)
  std::size_t edge_dim = 4;    // per-item code width
  double feature_noise = 0.05;
  double noise_rate = 0.0;     // eta: share of events replaced by uniform random edges
  std::uint64_t seed = 1;
};

struct ReoccurrenceSpec {
  std::size_t users = 50;
  std::size_t items = 200;
  std::size_t events = 5000;
  double repeat = 0.8;  // rho: probability of returning to the user's first partner
  std::uint64_t seed = 1;
};

namespace detail {

inline void check_sizes(std::size_t users, std::size_t items, std::size_t events) {
  if (users == 0 || items == 0) throw ConfigError("synthetic: users and items must be positive");
  if (events == 0) throw ConfigError("synthetic: events must be positive");
}

inline Event make_event(std::size_t k, NodeId u, NodeId i, std::vector<double> feat) {
  Event e;
  e.src = u;
  e.dst = i;
  e.t = static_cast<double>(k + 1);
  e.edge_feat = std::move(feat);
  return e;
}

}  // namespace detail

/// Users take turns in a seeded order; each walks its own fixed cycle of
/// distinct items. Edge features are a fixed per-item code plus small noise.
/// With noise_rate > 0 each event is independently replaced by a uniform
/// random (user, item) pair.
inline SyntheticStream periodic_bipartite(const PeriodicSpec& spec) {
  detail::check_sizes(spec.users, spec.items, spec.events);
  if (spec.cycle_len == 0 || spec.cycle_len > spec.items)
    throw ConfigError("periodic_bipartite: cycle_len must lie in [1, items]");
  if (spec.edge_dim == 0) throw ConfigError("periodic_bipartite: edge_dim must be >= 1");
  if (!(spec.noise_rate >= 0.0 && spec.noise_rate <= 1.0))
    throw ConfigError("periodic_bipartite: noise rate must lie in [0, 1]");
  Rng rng(spec.seed);
  const std::size_t U = spec.users, I = spec.items;

  std::vector<std::vector<double>> code(I, std::vector<double>(spec.edge_dim));
  for (auto& c : code)
    for (double& x : c) x = rng.normal();
  std::vector<std::vector<NodeId>> cycle(U);
  for (auto& c : cycle) {
    std::vector<NodeId> all(I);
    std::iota(all.begin(), all.end(), static_cast<NodeId>(U));
    for (std::size_t k = 0; k < spec.cycle_len; ++k) std::swap(all[k], all[k + rng.index(I - k)]);
    c.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.cycle_len));
  }
  std::vector<NodeId> order(U);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t k = U; k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);

  SyntheticStream out;
  out.users = U;
  out.items = I;
  out.stream.num_nodes = U + I;
  out.stream.edge_dim = spec.edge_dim;
  std::vector<std::size_t> pos(U, 0);
  for (std::size_t k = 0; k < spec.events; ++k) {
    NodeId u = order[k % U];
    NodeId i = cycle[u][pos[u]++ % spec.cycle_len];
    const bool noisy = spec.noise_rate > 0.0 && rng.bernoulli(spec.noise_rate);
    if (noisy) {
      u = static_cast<NodeId>(rng.index(U));
      i = static_cast<NodeId>(U + rng.index(I));
    }
    std::vector<double> feat = code[i - U];
    for (double& x : feat) x += spec.feature_noise * rng.normal();
    out.stream.events.push_back(detail::make_event(k, u, i, std::move(feat)));
    out.noise.push_back(noisy);
  }
  return out;
}

/// Each event picks a uniform user; its first event picks a uniform item that
/// becomes its partner, later events return to that partner with probability
/// `repeat` and otherwise pick a uniform item. No edge features.
inline SyntheticStream reoccurrence_heavy(const ReoccurrenceSpec& spec) {
  detail::check_sizes(spec.users, spec.items, spec.events);
  if (!(spec.repeat >= 0.0 && spec.repeat <= 1.0))
    throw ConfigError("reoccurrence_heavy: repeat probability must lie in [0, 1]");
  Rng rng(spec.seed);
  const std::size_t U = spec.users, I = spec.items;
  SyntheticStream out;
  out.users = U;
  out.items = I;
  out.stream.num_nodes = U + I;
  out.stream.edge_dim = 1;
  std::vector<std::int64_t> partner(U, -1);
  for (std::size_t k = 0; k < spec.events; ++k) {
    const auto u = static_cast<NodeId>(rng.index(U));
    NodeId i;
    if (partner[u] < 0) {
      i = static_cast<NodeId>(U + rng.index(I));
      partner[u] = i;
    } else if (rng.bernoulli(spec.repeat)) {
      i = static_cast<NodeId>(partner[u]);
    } else {
      i = static_cast<NodeId>(U + rng.index(I));
    }
    out.stream.events.push_back(detail::make_event(k, u, i, {0.0}));
    out.noise.push_back(false);
  }
  return out;
}

/// JODIE CSV with raw user ids 0..U-1 and raw item ids 0..I-1.
inline void write_synthetic_csv(const SyntheticStream& s, std::ostream& os) {
  std::vector<NodeId> raw(s.users + s.items);
  for (std::size_t v = 0; v < raw.size(); ++v)
    raw[v] = static_cast<NodeId>(v < s.users ? v : v - s.users);
  write_jodie_csv(s.stream, os, raw, raw);
}

}  // namespace ilore
