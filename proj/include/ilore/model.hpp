// SPDX-License-Identifier: Apache-2.0
//
// The assembled model: shared time encoding, gated short-term updater,
// long-term transformer, graph embedder, and link head, plus the per-batch
// memory pipeline that ties them to the streaming state.

#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ilore/encodings.hpp"
#include "ilore/event_store.hpp"
#include "ilore/layers.hpp"
#include "ilore/long_term.hpp"
#include "ilore/parameters.hpp"
#include "ilore/reoccurrence_graph.hpp"
#include "ilore/rng.hpp"
#include "ilore/short_term.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

struct ModelConfig {
  std::size_t dim = 100;
  std::size_t time_dim = 100;
  std::size_t edge_dim = 1;
  std::size_t ffn_dim = 200;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t chunk = 5;  // n: windows per batch and slots per node bucket
  std::size_t ranges = 10;
  std::size_t graph_layers = 1;
  std::size_t neighbors = 10;
  std::size_t graph_heads = 2;
  double alpha = 0.5;
  double initial_state = 0.5;
  // Ablation switches; all true is the full model.
  bool state_module = true;
  bool gaussian_range = true;
  bool identity_attention = true;
  bool reoccurrence = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0 || time_dim == 0 || edge_dim == 0 || ffn_dim == 0)
      throw ConfigError("dimensions must be positive");
    if (chunk == 0) throw ConfigError("chunk size must be >= 1");
    if (ranges == 0) throw ConfigError("range count must be >= 1");
    if (heads == 0 || dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (graph_heads == 0 || dim % graph_heads != 0)
      throw ConfigError("dim must be divisible by graph_heads");
    if (graph_layers == 0) throw ConfigError("graph_layers must be >= 1");
    if (neighbors == 0) throw ConfigError("neighbors must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    if (!(initial_state > 0.0 && initial_state < 1.0))
      throw ConfigError("initial_state must lie in (0, 1)");
  }
};

/// Everything that evolves while streaming: memories, node states, history.
struct StreamState {
  MemoryStore memory;
  NodeStates states;
  NeighborStore neighbors;

  StreamState(std::size_t num_nodes, const ModelConfig& cfg)
      : memory(num_nodes, cfg.dim),
        states(num_nodes, cfg.initial_state),
        neighbors(num_nodes, cfg.edge_dim) {}
};

struct GateStats {
  std::size_t decisions = 0;  // aggregated (node, window) messages seen by the gate
  std::size_t on = 0;         // of which S = 1

  double skip_rate() const {
    return decisions == 0 ? 0.0 : 1.0 - static_cast<double>(on) / static_cast<double>(decisions);
  }
  GateStats& operator+=(const GateStats& o) {
    decisions += o.decisions;
    on += o.on;
    return *this;
  }
};

struct GateOptions {
  /// false treats the sampled bits as constants (no gradient into s_hat).
  bool straight_through = true;
  /// When set, gate bits are read from here in decision order instead of sampled.
  const std::vector<int>* replay = nullptr;
};

/// Result of one batch memory update. `long_rows` still carries the graph back
/// to the parameters; the store itself only ever holds detached values.
struct MemoryUpdate {
  std::vector<NodeId> nodes;  // nodes whose long-term memory was rewritten
  Tensor long_rows;           // [nodes x d], undefined when no snapshot was taken
  std::vector<SnapshotKey> snapshots;
  std::vector<int> bits;      // every gate decision in order
  GateStats gate;
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t d = cfg.dim;
    time_enc_ = TimeEncoding::create(params_, "time", cfg.time_dim);
    gru_ = GruCell::create(params_, "short.gru", 2 * d + cfg.edge_dim + cfg.time_dim, d, rng);
    state_ = StateProjection::create(params_, "short.state", d, rng);
    TransformerConfig tc;
    tc.blocks = cfg.blocks;
    tc.heads = cfg.heads;
    tc.dim = d;
    tc.ffn_dim = cfg.ffn_dim;
    tc.chunk = cfg.chunk;
    tc.ranges = cfg.ranges;
    tc.gaussian_range = cfg.gaussian_range;
    long_term_ = std::make_shared<LongTermUpdater>(params_, "long", tc, time_enc_, rng);
    GraphConfig gc;
    gc.dim = d;
    gc.edge_dim = cfg.edge_dim;
    gc.layers = cfg.graph_layers;
    gc.neighbors = cfg.neighbors;
    gc.heads = cfg.graph_heads;
    gc.reoccurrence = cfg.reoccurrence;
    graph_ = std::make_shared<GraphEmbedder>(params_, "graph", gc, time_enc_, rng);
    link_ = Mlp2::create(params_, "link", 2 * d, d, 1, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }
  const TimeEncoding& time_encoding() const { return time_enc_; }
  const GruCell& gru() const { return gru_; }
  const StateProjection& state_projection() const { return state_; }
  const LongTermUpdater& long_term() const { return *long_term_; }
  const GraphEmbedder& graph() const { return *graph_; }
  const Mlp2& link_head() const { return link_; }

  StreamState fresh_state(std::size_t num_nodes) const { return StreamState(num_nodes, cfg_); }

  /// Splits `events` into n windows, runs the gated short-term updates window by
  /// window, then the long-term transformer and pooling. Detached results are
  /// written to `st`; the returned rows keep their gradient path.
  MemoryUpdate update_memory(std::span<const Event> events, StreamState& st, GateMode mode,
                             Rng& rng, const GateOptions& opt = {}) const {
    MemoryUpdate out;
    const std::size_t m = events.size(), n = cfg_.chunk, d = cfg_.dim, de = cfg_.edge_dim;
    if (m == 0) return out;

    std::vector<NodeId> touched;
    std::unordered_map<NodeId, std::size_t> local;
    for (const Event& e : events)
      for (NodeId v : {e.src, e.dst})
        if (local.emplace(v, touched.size()).second) touched.push_back(v);
    Tensor short_mem = st.memory.short_term_rows(touched);
    std::vector<double> s0(touched.size());
    for (std::size_t k = 0; k < touched.size(); ++k) s0[k] = st.states[touched[k]];
    Tensor s_hat = Tensor::column(std::move(s0));

    std::vector<Tensor> snapshot_rows;
    std::size_t replay_pos = 0;
    for (std::size_t w = 0; w < n; ++w) {
      const std::size_t begin = w * m / n, end = (w + 1) * m / n;
      if (begin == end) continue;
      std::vector<MessageKey> keys;
      for (std::size_t k = begin; k < end; ++k) {
        keys.push_back({events[k].src, events[k].t, k});
        keys.push_back({events[k].dst, events[k].t, k});
      }
      const std::vector<std::size_t> survivors = aggregate_most_recent(keys);
      const std::size_t M = survivors.size();

      std::vector<NodeId> self(M), partner(M);
      std::vector<std::size_t> idx(M);
      std::vector<double> deltas(M), feats(M * de);
      for (std::size_t r = 0; r < M; ++r) {
        const MessageKey& key = keys[survivors[r]];
        const Event& e = events[key.order];
        self[r] = key.node;
        partner[r] = survivors[r] % 2 == 0 ? e.dst : e.src;
        const double last = st.memory.last_update(key.node);
        if (e.t < last)
          throw OrderingError("update_memory: event at t=" + std::to_string(e.t) +
                              " precedes last update of node " + std::to_string(key.node));
        deltas[r] = e.t - last;
        if (e.edge_feat.size() != de)
          throw DimensionError("update_memory: edge feature width " +
                               std::to_string(e.edge_feat.size()) + " vs " + std::to_string(de));
        std::copy(e.edge_feat.begin(), e.edge_feat.end(), feats.begin() + r * de);
        idx[r] = local.at(key.node);
      }
      const Tensor payload = concat({st.memory.long_term_rows(self), st.memory.long_term_rows(partner),
                                     Tensor({M, de}, std::move(feats)), time_enc_.encode(deltas)});
      const Tensor old = gather_rows(short_mem, idx);
      const Tensor s_old = gather_rows(s_hat, idx);

      std::vector<double> bits(M, 1.0);
      if (cfg_.state_module)
        for (std::size_t r = 0; r < M; ++r) {
          if (opt.replay) {
            if (replay_pos >= opt.replay->size())
              throw ContractError("update_memory: replayed gate sequence exhausted");
            bits[r] = (*opt.replay)[replay_pos++];
          } else {
            bits[r] = sample_state(s_old[r], mode, rng);
          }
        }
      const Tensor bit_t = Tensor::column(bits);
      const Tensor gate =
          cfg_.state_module && opt.straight_through ? straight_through(s_old, bit_t) : bit_t;

      std::vector<std::size_t> on;
      for (std::size_t r = 0; r < M; ++r)
        if (bits[r] != 0.0) on.push_back(r);

      Tensor fresh;
      if (grad_enabled()) {
        fresh = update_short_memory(gru_, old, payload, gate);
      } else if (on.empty()) {
        fresh = old;
      } else {
        // Inference skips the GRU for gated-off rows entirely.
        fresh = index_put_rows(old, on, gru_(gather_rows(payload, on), gather_rows(old, on)));
      }
      if (cfg_.state_module)
        s_hat = index_put_rows(s_hat, idx, update_node_state(state_, s_old, fresh, gate, cfg_.alpha));
      short_mem = index_put_rows(short_mem, idx, fresh);

      for (std::size_t r : on) out.snapshots.push_back({self[r], w, events[keys[survivors[r]].order].t});
      if (!on.empty()) snapshot_rows.push_back(gather_rows(fresh, on));
      for (double b : bits) out.bits.push_back(static_cast<int>(b));
      out.gate.decisions += M;
      out.gate.on += on.size();
    }

    // Carry short-term memories and node states forward, detached.
    for (std::size_t k = 0; k < touched.size(); ++k) {
      auto dst = st.memory.short_term(touched[k]);
      for (std::size_t c = 0; c < d; ++c) dst[c] = short_mem.at(k, c);
      if (cfg_.state_module) st.states.set(touched[k], s_hat[k]);
    }
    if (out.snapshots.empty()) return out;

    const Tensor memories = concat(snapshot_rows, 0);
    std::vector<double> latest;
    if (cfg_.identity_attention) {
      const ChunkedSequence seq = resort_pad_chunk(out.snapshots, memories, n);
      const Tensor h = long_term_->encode(seq.rows, identity_layout(seq));
      out.long_rows = pool_rows(h, seq);
      out.nodes = seq.nodes;
    } else {
      const Tensor h = long_term_->encode(memories, full_layout(out.snapshots));
      out.long_rows = pool_by_node(h, out.snapshots, out.nodes);
    }
    std::unordered_map<NodeId, double> newest;
    for (const auto& s : out.snapshots) {
      auto [it, inserted] = newest.emplace(s.node, s.t);
      if (!inserted) it->second = std::max(it->second, s.t);
    }
    for (std::size_t g = 0; g < out.nodes.size(); ++g) {
      const NodeId v = out.nodes[g];
      auto lt = st.memory.long_term(v);
      for (std::size_t c = 0; c < d; ++c) lt[c] = out.long_rows.at(g, c);
      auto sm = st.memory.short_term(v);
      std::fill(sm.begin(), sm.end(), 0.0);
      st.memory.set_last_update(v, std::max(st.memory.last_update(v), newest.at(v)));
    }
    return out;
  }

  /// h^0 rows for `ids`: rows rewritten by `upd` keep their gradient path, the
  /// rest are constants read from the store.
  Tensor memory_rows(const std::vector<NodeId>& ids, const StreamState& st,
                     const MemoryUpdate* upd) const {
    std::unordered_map<NodeId, std::size_t> live;
    if (upd && upd->long_rows.defined())
      for (std::size_t g = 0; g < upd->nodes.size(); ++g) live.emplace(upd->nodes[g], g);
    if (live.empty()) return st.memory.long_term_rows(ids);
    std::vector<NodeId> others;
    std::vector<std::size_t> gather(ids.size());
    const std::size_t base = upd->nodes.size();
    for (std::size_t q = 0; q < ids.size(); ++q) {
      auto it = live.find(ids[q]);
      if (it != live.end()) {
        gather[q] = it->second;
      } else {
        gather[q] = base + others.size();
        others.push_back(ids[q]);
      }
    }
    if (others.empty()) return gather_rows(upd->long_rows, gather);
    return gather_rows(concat({upd->long_rows, st.memory.long_term_rows(others)}, 0), gather);
  }

  /// z(t) for each (ids[q], times[q]).
  Tensor embed(const std::vector<NodeId>& ids, const std::vector<double>& times,
               const StreamState& st, const MemoryUpdate* upd = nullptr) const {
    const MemoryLookup lookup = [&](const std::vector<NodeId>& q) { return memory_rows(q, st, upd); };
    return graph_->embed(ids, times, st.neighbors, lookup, cfg_.graph_layers);
  }

  /// Pre-sigmoid link scores for row pairs of z_src, z_dst: [m x 1].
  Tensor link_logits(const Tensor& z_src, const Tensor& z_dst) const {
    return link_(concat({z_src, z_dst}));
  }
  Tensor link_probability(const Tensor& z_src, const Tensor& z_dst) const {
    return sigmoid(link_logits(z_src, z_dst));
  }

 private:
  /// Mean of each node's rows in h, nodes in ascending id order.
  static Tensor pool_by_node(const Tensor& h, const std::vector<SnapshotKey>& keys,
                             std::vector<NodeId>& nodes) {
    nodes.clear();
    for (const auto& k : keys) nodes.push_back(k.node);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    std::vector<double> weights(nodes.size() * keys.size(), 0.0);
    std::vector<double> count(nodes.size(), 0.0);
    auto slot = [&](NodeId v) {
      return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), v) - nodes.begin());
    };
    for (const auto& k : keys) count[slot(k.node)] += 1.0;
    for (std::size_t r = 0; r < keys.size(); ++r) {
      const std::size_t g = slot(keys[r].node);
      weights[g * keys.size() + r] = 1.0 / count[g];
    }
    return matmul(Tensor({nodes.size(), keys.size()}, std::move(weights)), h);
  }

  ModelConfig cfg_;
  ParameterStore params_;
  TimeEncoding time_enc_;
  GruCell gru_;
  StateProjection state_;
  std::shared_ptr<LongTermUpdater> long_term_;
  std::shared_ptr<GraphEmbedder> graph_;
  Mlp2 link_;
};

/// -sum[log p_pos + log(1 - p_neg)] on probabilities.
inline Tensor bce_loss(const Tensor& p_pos, const Tensor& p_neg) {
  return neg(add(sum(log(p_pos)), sum(log(add_scalar(neg(p_neg), 1.0)))));
}

/// Same loss from pre-sigmoid scores, stable for large magnitudes.
inline Tensor bce_with_logits(const Tensor& pos_logits, const Tensor& neg_logits) {
  return add(sum(softplus(neg(pos_logits))), sum(softplus(neg_logits)));
}

}  // namespace ilore
