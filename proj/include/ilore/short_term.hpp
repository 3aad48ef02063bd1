// SPDX-License-Identifier: Apache-2.0
//
// Adaptive short-term updater: per-event messages, most-recent aggregation
// inside a window, the Bernoulli node-state gate, and the gated GRU update.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ilore/encodings.hpp"
#include "ilore/event_store.hpp"
#include "ilore/layers.hpp"
#include "ilore/rng.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

inline constexpr double kStateEpsilon = 1e-6;

/// Detached per-node memories carried across batches.
class MemoryStore {
 public:
  MemoryStore(std::size_t num_nodes, std::size_t dim)
      : dim_(dim),
        short_(num_nodes * dim, 0.0),
        long_(num_nodes * dim, 0.0),
        last_update_(num_nodes, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t num_nodes() const { return last_update_.size(); }

  std::span<const double> short_term(NodeId i) const { return {short_.data() + i * dim_, dim_}; }
  std::span<const double> long_term(NodeId i) const { return {long_.data() + i * dim_, dim_}; }
  std::span<double> short_term(NodeId i) { return {short_.data() + i * dim_, dim_}; }
  std::span<double> long_term(NodeId i) { return {long_.data() + i * dim_, dim_}; }
  double last_update(NodeId i) const { return last_update_.at(i); }
  void set_last_update(NodeId i, double t) { last_update_.at(i) = t; }

  /// Long-term rows of `ids` as a constant [ids x dim] tensor.
  Tensor long_term_rows(std::span<const NodeId> ids) const {
    std::vector<double> v(ids.size() * dim_);
    for (std::size_t k = 0; k < ids.size(); ++k)
      std::copy_n(long_.data() + ids[k] * dim_, dim_, v.data() + k * dim_);
    return Tensor({ids.size(), dim_}, std::move(v));
  }
  Tensor short_term_rows(std::span<const NodeId> ids) const {
    std::vector<double> v(ids.size() * dim_);
    for (std::size_t k = 0; k < ids.size(); ++k)
      std::copy_n(short_.data() + ids[k] * dim_, dim_, v.data() + k * dim_);
    return Tensor({ids.size(), dim_}, std::move(v));
  }

 private:
  std::size_t dim_;
  std::vector<double> short_;
  std::vector<double> long_;
  std::vector<double> last_update_;
};

/// Per-node Bernoulli parameter s_hat in (0, 1).
class NodeStates {
 public:
  NodeStates(std::size_t num_nodes, double initial) : s_(num_nodes, initial) {
    if (!(initial > 0.0 && initial < 1.0))
      throw ConfigError("initial node state must lie in (0, 1)");
  }
  double operator[](NodeId i) const { return s_.at(i); }
  void set(NodeId i, double v) { s_.at(i) = v; }
  std::size_t size() const { return s_.size(); }

 private:
  std::vector<double> s_;
};

// ---------------------------------------------------------------- messages

struct Message {
  NodeId node = 0;
  double t = 0.0;
  std::size_t order = 0;  // position in the stream; later wins on equal t
  Tensor payload;         // [1 x (2d + d_e + d_t)]
};

/// m_i = [M^L_i | M^L_j | e_ij | Phi(t - t_i^-)] and the mirror message for j.
inline std::pair<Message, Message> build_messages(const Event& e, std::size_t order,
                                                  const MemoryStore& mem,
                                                  const TimeEncoding& time_enc) {
  const double ti = mem.last_update(e.src), tj = mem.last_update(e.dst);
  if (e.t < ti || e.t < tj)
    throw OrderingError("build_messages: event time " + std::to_string(e.t) +
                        " precedes a last-update time");
  const std::size_t d = mem.dim();
  auto memory_row = [&](NodeId v) {
    auto s = mem.long_term(v);
    return Tensor({1, d}, std::vector<double>(s.begin(), s.end()));
  };
  const Tensor li = memory_row(e.src), lj = memory_row(e.dst);
  const Tensor feat({1, e.edge_feat.size()}, e.edge_feat);
  const double deltas[2] = {e.t - ti, e.t - tj};
  const Tensor phi = time_enc.encode(deltas);
  Message mi{e.src, e.t, order, concat({li, lj, feat, slice_rows(phi, 0, 1)})};
  Message mj{e.dst, e.t, order, concat({lj, li, feat, slice_rows(phi, 1, 2)})};
  return {std::move(mi), std::move(mj)};
}

struct MessageKey {
  NodeId node;
  double t;
  std::size_t order;
};

/// Index of the surviving message per node (largest t, then latest order),
/// returned in ascending node order.
inline std::vector<std::size_t> aggregate_most_recent(std::span<const MessageKey> msgs) {
  std::map<NodeId, std::size_t> best;
  for (std::size_t k = 0; k < msgs.size(); ++k) {
    auto [it, inserted] = best.emplace(msgs[k].node, k);
    if (inserted) continue;
    const MessageKey& cur = msgs[it->second];
    if (msgs[k].t > cur.t || (msgs[k].t == cur.t && msgs[k].order >= cur.order)) it->second = k;
  }
  std::vector<std::size_t> out;
  out.reserve(best.size());
  for (const auto& [_, k] : best) out.push_back(k);
  return out;
}

inline std::vector<Message> aggregate_most_recent(const std::vector<Message>& msgs) {
  std::vector<MessageKey> keys;
  for (const auto& m : msgs) keys.push_back({m.node, m.t, m.order});
  std::vector<Message> out;
  for (std::size_t k : aggregate_most_recent(keys)) out.push_back(msgs[k]);
  return out;
}

// ---------------------------------------------------------------- gate

enum class GateMode { Train, Eval };

/// Train: Bernoulli(s_hat) draw. Eval: 1 iff s_hat >= 0.5.
inline int sample_state(double s_hat, GateMode mode, Rng& rng) {
  if (!(s_hat > 0.0 && s_hat < 1.0))
    throw ContractError("sample_state: s_hat " + std::to_string(s_hat) + " outside (0, 1)");
  if (mode == GateMode::Eval) return s_hat >= 0.5 ? 1 : 0;
  return rng.bernoulli(s_hat) ? 1 : 0;
}

// ---------------------------------------------------------------- GRU

/// Standard three-gate GRU (reset, update, candidate), gates packed along columns.
struct GruCell {
  Tensor w_input;   // [in x 3h]
  Tensor b_input;   // [1 x 3h]
  Tensor w_hidden;  // [h x 3h]
  Tensor b_hidden;  // [1 x 3h]

  static GruCell create(ParameterStore& store, const std::string& name, std::size_t in,
                        std::size_t hidden, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    GruCell g;
    g.w_input = store.add_uniform(name + ".w_input", {in, 3 * hidden}, bound, rng);
    g.b_input = store.add_uniform(name + ".b_input", {1, 3 * hidden}, bound, rng);
    g.w_hidden = store.add_uniform(name + ".w_hidden", {hidden, 3 * hidden}, bound, rng);
    g.b_hidden = store.add_uniform(name + ".b_hidden", {1, 3 * hidden}, bound, rng);
    return g;
  }

  std::size_t hidden() const { return w_hidden.dim(0); }
  std::size_t input() const { return w_input.dim(0); }

  /// x: [m x in], h: [m x hidden] -> [m x hidden]
  Tensor operator()(const Tensor& x, const Tensor& h) const {
    const std::size_t H = hidden();
    const Tensor gi = add(matmul(x, w_input), b_input);
    const Tensor gh = add(matmul(h, w_hidden), b_hidden);
    const Tensor r = sigmoid(add(slice_cols(gi, 0, H), slice_cols(gh, 0, H)));
    const Tensor z = sigmoid(add(slice_cols(gi, H, 2 * H), slice_cols(gh, H, 2 * H)));
    const Tensor n = tanh(add(slice_cols(gi, 2 * H, 3 * H), mul(r, slice_cols(gh, 2 * H, 3 * H))));
    // (1 - z) * n + z * h  ==  n + z * (h - n)
    return add(n, mul(z, sub(h, n)));
  }
};

/// S = 1 -> GRU(m, M^S_old); S = 0 -> M^S_old. `gate` is [m x 1] with 0/1 values
/// (possibly a straight-through tensor).
inline Tensor update_short_memory(const GruCell& gru, const Tensor& old_memory,
                                  const Tensor& payload, const Tensor& gate) {
  const Tensor candidate = gru(payload, old_memory);
  // S * new + (1 - S) * old reproduces either branch exactly for a 0/1 gate.
  return add(mul(gate, candidate), mul(add_scalar(neg(gate), 1.0), old_memory));
}

// ---------------------------------------------------------------- node state

struct StateProjection {
  Tensor weight;  // W_p: [d x 1]
  Tensor bias;    // b_p: [1 x 1]

  static StateProjection create(ParameterStore& store, const std::string& name, std::size_t dim,
                                Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    // Zero bias: a node with empty short-term memory starts at delta = 0.5.
    return {store.add_uniform(name + ".weight", {dim, 1}, bound, rng),
            store.add_zeros(name + ".bias", {1, 1})};
  }

  /// Delta s_hat = sigmoid(M^S W_p + b_p), [m x 1].
  Tensor delta(const Tensor& short_memory) const {
    return sigmoid(add(matmul(short_memory, weight), bias));
  }
};

/// S = 0 -> delta;  S = 1 -> s_hat - alpha * min(delta, S); result clamped to [eps, 1 - eps].
/// s_hat, gate: [m x 1]; new_short_memory: [m x d].
inline Tensor update_node_state(const StateProjection& proj, const Tensor& s_hat,
                                const Tensor& new_short_memory, const Tensor& gate, double alpha) {
  const Tensor delta = proj.delta(new_short_memory);
  const Tensor skipped = mul(add_scalar(neg(gate), 1.0), delta);
  const Tensor updated = mul(gate, sub(s_hat, scale(minimum(delta, gate), alpha)));
  return clamp(add(skipped, updated), kStateEpsilon, 1.0 - kStateEpsilon);
}

}  // namespace ilore
