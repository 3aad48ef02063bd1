// SPDX-License-Identifier: Apache-2.0
//
// Long-term updater. The short-term snapshots of the last n windows are
// bucket-sorted by node identity, padded so every node owns exactly n rows
// (one per window), and fed through a pre-LN transformer whose attention is
// restricted to same-identity, same-chunk, not-later rows. Each node's
// long-term memory is the mean of its real output rows.
//
// Because buckets have length n and chunks have size n, chunk boundaries
// coincide with node buckets: the "previous chunk" half of the chunk window
// always belongs to a different identity and is masked out, so attention is
// computed per bucket.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ilore/encodings.hpp"
#include "ilore/layers.hpp"
#include "ilore/short_term.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct SnapshotKey {
  NodeId node = 0;
  std::size_t window = 0;  // in [0, n)
  double t = 0.0;          // time of the node's aggregated message in that window
};

/// Bucket-sorted, padded, chunked snapshot sequence. Row r belongs to node
/// nodes[r / n] at window r % n.
struct ChunkedSequence {
  std::size_t chunk = 0;
  std::vector<NodeId> nodes;                 // bucket order (ascending id)
  std::vector<std::size_t> source;           // per row: snapshot index, or kPad
  std::vector<double> time;                  // per row: snapshot time, -inf for pads
  std::vector<bool> real;                    // per row
  std::vector<std::size_t> position_of;      // snapshot index -> sorted row c_i
  Tensor rows;                               // [nodes * n x d], pads are zero rows

  static constexpr std::size_t kPad = static_cast<std::size_t>(-1);

  std::size_t size() const { return real.size(); }
  std::size_t window_of(std::size_t row) const { return row % chunk; }
  NodeId node_of(std::size_t row) const { return nodes[row / chunk]; }
};

/// Rows c_j a sorted row c_i may see under chunk size n: the current and the
/// previous chunk, [max(0, (c/n - 1) n), (c/n + 1) n - 1].
inline std::pair<std::size_t, std::size_t> chunk_admissible_range(std::size_t c, std::size_t n) {
  const std::size_t block = c / n;
  return {block == 0 ? 0 : (block - 1) * n, (block + 1) * n - 1};
}

/// memories: [snapshots x d], row k holds the short-term memory of keys[k].
inline ChunkedSequence resort_pad_chunk(const std::vector<SnapshotKey>& keys,
                                        const Tensor& memories, std::size_t n) {
  if (n == 0) throw ContractError("resort_pad_chunk: chunk size must be >= 1");
  if (memories.ndim() != 2 || memories.rows() != keys.size())
    throw DimensionError("resort_pad_chunk: " + std::to_string(keys.size()) + " keys vs memories " +
                         shape_str(memories.shape()));
  std::map<NodeId, std::vector<std::size_t>> buckets;  // node -> slot -> snapshot
  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (keys[k].window >= n)
      throw ContractError("resort_pad_chunk: window index " + std::to_string(keys[k].window) +
                          " outside [0, n)");
    auto& slots = buckets[keys[k].node];
    if (slots.empty()) slots.assign(n, ChunkedSequence::kPad);
    if (slots[keys[k].window] != ChunkedSequence::kPad)
      throw ContractError("resort_pad_chunk: duplicate snapshot for node " +
                          std::to_string(keys[k].node) + " window " + std::to_string(keys[k].window));
    slots[keys[k].window] = k;
  }
  ChunkedSequence seq;
  seq.chunk = n;
  seq.position_of.assign(keys.size(), 0);
  const std::size_t pad_row = keys.size();
  std::vector<std::size_t> gather;
  for (const auto& [node, slots] : buckets) {
    seq.nodes.push_back(node);
    for (std::size_t w = 0; w < n; ++w) {
      const std::size_t k = slots[w];
      const std::size_t row = seq.real.size();
      seq.source.push_back(k);
      seq.real.push_back(k != ChunkedSequence::kPad);
      seq.time.push_back(k == ChunkedSequence::kPad ? kNegInf : keys[k].t);
      gather.push_back(k == ChunkedSequence::kPad ? pad_row : k);
      if (k != ChunkedSequence::kPad) seq.position_of[k] = row;
    }
  }
  const Tensor with_pad = concat({memories, Tensor::zeros({1, memories.cols()})}, 0);
  seq.rows = gather_rows(with_pad, gather);
  return seq;
}

/// Grouped attention layout: `groups` independent blocks of `length` rows.
struct AttentionLayout {
  std::size_t groups = 0;
  std::size_t length = 0;
  std::vector<bool> real;          // per row
  std::vector<std::size_t> slot;   // per row, index into the positional table
  std::vector<double> time;        // per row
  std::vector<bool> admissible;    // per (group, query, key)

  std::size_t rows() const { return groups * length; }
  bool allowed(std::size_t g, std::size_t i, std::size_t j) const {
    return admissible[(g * length + i) * length + j];
  }
};

/// One group per node bucket; a real query may see real keys of its own bucket
/// at the same or an earlier window.
inline AttentionLayout identity_layout(const ChunkedSequence& seq) {
  AttentionLayout lay;
  lay.groups = seq.nodes.size();
  lay.length = seq.chunk;
  lay.real = seq.real;
  lay.time = seq.time;
  lay.slot.resize(seq.size());
  for (std::size_t r = 0; r < seq.size(); ++r) lay.slot[r] = seq.window_of(r);
  const std::size_t n = seq.chunk;
  lay.admissible.assign(lay.groups * n * n, false);
  for (std::size_t g = 0; g < lay.groups; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        lay.admissible[(g * n + i) * n + j] = seq.real[g * n + i] && seq.real[g * n + j];
  return lay;
}

/// Full attention over the unsorted real snapshots (ablation): a single group,
/// causal in time only. keys must be in stream order.
inline AttentionLayout full_layout(const std::vector<SnapshotKey>& keys) {
  AttentionLayout lay;
  lay.groups = 1;
  lay.length = keys.size();
  lay.real.assign(keys.size(), true);
  for (const auto& k : keys) {
    lay.slot.push_back(k.window);
    lay.time.push_back(k.t);
  }
  const std::size_t L = keys.size();
  lay.admissible.assign(L * L, false);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) lay.admissible[i * L + j] = keys[j].t <= keys[i].t;
  return lay;
}

struct AttentionBlockParams {
  Tensor w_query;  // [d x d]
  Tensor w_key;    // [d x d]
  Tensor w_value;  // [d x d]
  Tensor w_time;   // [d_t x d]
  Linear out;      // [d x d]
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // [1 x d]
  Linear ffn1;     // [d x d_ff]
  Linear ffn2;     // [d_ff x d]
};

struct TransformerConfig {
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t dim = 100;
  std::size_t ffn_dim = 200;
  std::size_t chunk = 5;
  std::size_t ranges = 10;
  bool gaussian_range = true;  // false: sinusoidal positions (ablation)
};

class LongTermUpdater {
 public:
  LongTermUpdater(ParameterStore& store, const std::string& name, const TransformerConfig& cfg,
                  const TimeEncoding& time_enc, Rng& rng)
      : cfg_(cfg), time_enc_(time_enc) {
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0)
      throw ConfigError("model dim must be divisible by the head count");
    const std::size_t d = cfg.dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    range_ = GaussianRangeEncoding::create(store, name + ".range", cfg.ranges, cfg.chunk, d);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = name + ".block" + std::to_string(b);
      AttentionBlockParams blk;
      blk.w_query = store.add_uniform(p + ".attn.w_query", {d, d}, bound, rng);
      blk.w_key = store.add_uniform(p + ".attn.w_key", {d, d}, bound, rng);
      blk.w_value = store.add_uniform(p + ".attn.w_value", {d, d}, bound, rng);
      blk.w_time = store.add_uniform(p + ".attn.w_time", {time_enc.dim(), d},
                                     1.0 / std::sqrt(static_cast<double>(time_enc.dim())), rng);
      blk.out = Linear::create(store, p + ".attn.out", d, d, rng);
      blk.ln1_gain = store.add(p + ".ln1.gain", {1, d}, std::vector<double>(d, 1.0));
      blk.ln1_bias = store.add_zeros(p + ".ln1.bias", {1, d});
      blk.ln2_gain = store.add(p + ".ln2.gain", {1, d}, std::vector<double>(d, 1.0));
      blk.ln2_bias = store.add_zeros(p + ".ln2.bias", {1, d});
      blk.ffn1 = Linear::create(store, p + ".ffn.fc1", d, cfg.ffn_dim, rng);
      blk.ffn2 = Linear::create(store, p + ".ffn.fc2", cfg.ffn_dim, d, rng);
      blocks_.push_back(std::move(blk));
    }
  }

  const TransformerConfig& config() const { return cfg_; }
  const std::vector<AttentionBlockParams>& blocks() const { return blocks_; }
  const GaussianRangeEncoding& range_encoding() const { return range_; }
  const TimeEncoding& time_encoding() const { return time_enc_; }

  /// Per-slot additive key offsets, [chunk x d].
  Tensor position_table() const {
    return cfg_.gaussian_range ? range_.table(cfg_.chunk) : sinusoidal_table(cfg_.chunk, cfg_.dim);
  }

  /// Multi-head attention of one block over `x` ([layout.rows() x d], already
  /// normalized). Logits are q_i.k_j + q_i.(Phi(t_i - t_j) W_t) with keys
  /// offset by the position table; no 1/sqrt(d_k) scaling. Pad rows output zero.
  Tensor attention(const AttentionBlockParams& blk, const Tensor& x, const AttentionLayout& lay,
                   const Tensor& positions) const {
    const std::size_t G = lay.groups, L = lay.length, R = lay.rows();
    const std::size_t d = cfg_.dim, H = cfg_.heads, dh = d / H;
    if (x.ndim() != 2 || x.rows() != R || x.cols() != d)
      throw DimensionError("identity_attention: input " + shape_str(x.shape()) + " for " +
                           std::to_string(R) + " rows of width " + std::to_string(d));

    const Tensor q = matmul(x, blk.w_query);
    const Tensor k = matmul(add(x, gather_rows(positions, lay.slot)), blk.w_key);
    const Tensor v = matmul(x, blk.w_value);
    const TimeGrid grid = time_grid(lay);

    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < H; ++h) {
      const Tensor weights = softmax(head_logits(blk, q, k, grid, lay, h));
      const Tensor vh = reshape(slice_cols(v, h * dh, (h + 1) * dh), {G, L, dh});
      heads.push_back(reshape(bmm(weights, vh), {R, dh}));
    }
    return mul(blk.out(concat(heads)), row_mask(lay));
  }

  /// Attention weights of one head, [groups x length x length] (diagnostics and tests).
  Tensor attention_weights(const AttentionBlockParams& blk, const Tensor& x,
                           const AttentionLayout& lay, std::size_t head) const {
    NoGradGuard guard;
    const Tensor q = matmul(x, blk.w_query);
    const Tensor k = matmul(add(x, gather_rows(position_table(), lay.slot)), blk.w_key);
    return softmax(head_logits(blk, q, k, time_grid(lay), lay, head));
  }

  /// b pre-LN blocks of (attention residual, feed-forward residual).
  Tensor encode(const Tensor& z0, const AttentionLayout& lay) const {
    const Tensor rmask = row_mask(lay);
    const Tensor positions = position_table();
    Tensor z = z0;
    for (const auto& blk : blocks_) {
      const Tensor x1 = mul(add(mul(layer_norm(z), blk.ln1_gain), blk.ln1_bias), rmask);
      z = add(z, attention(blk, x1, lay, positions));
      const Tensor x2 = add(mul(layer_norm(z), blk.ln2_gain), blk.ln2_bias);
      z = add(z, mul(blk.ffn2(relu(blk.ffn1(x2))), rmask));
    }
    return z;
  }

 private:
  struct TimeGrid {
    Tensor phi;   // [rows x length x d_t], Phi(t_i - t_j); zero deltas where masked
    Tensor mask;  // [groups x length x length], 0 or -inf
  };

  TimeGrid time_grid(const AttentionLayout& lay) const {
    const std::size_t G = lay.groups, L = lay.length, R = lay.rows();
    std::vector<double> deltas(R * L, 0.0), mask(G * L * L, kNegInf);
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
          if (lay.allowed(g, i, j)) {
            deltas[(g * L + i) * L + j] = lay.time[g * L + i] - lay.time[g * L + j];
            mask[(g * L + i) * L + j] = 0.0;
          }
    return {reshape(time_enc_(Tensor::column(std::move(deltas))), {R, L, time_enc_.dim()}),
            Tensor({G, L, L}, std::move(mask))};
  }

  Tensor head_logits(const AttentionBlockParams& blk, const Tensor& q, const Tensor& k,
                     const TimeGrid& grid, const AttentionLayout& lay, std::size_t h) const {
    const std::size_t G = lay.groups, L = lay.length, R = lay.rows();
    const std::size_t dh = cfg_.dim / cfg_.heads, dt = time_enc_.dim();
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    // q_i . (Phi_ij W_t) == (q_i W_t^T) . Phi_ij
    const Tensor u = matmul(qh, transpose(slice_cols(blk.w_time, h * dh, (h + 1) * dh)));
    const Tensor time_bias = reshape(bmm(reshape(u, {R, 1, dt}), grid.phi, true), {G, L, L});
    const Tensor content = bmm(reshape(qh, {G, L, dh}), reshape(kh, {G, L, dh}), true);
    return add(add(content, time_bias), grid.mask);
  }

  static Tensor row_mask(const AttentionLayout& lay) {
    std::vector<double> m(lay.rows());
    for (std::size_t r = 0; r < m.size(); ++r) m[r] = lay.real[r] ? 1.0 : 0.0;
    return Tensor::column(std::move(m));
  }

  TransformerConfig cfg_;
  TimeEncoding time_enc_;
  GaussianRangeEncoding range_;
  std::vector<AttentionBlockParams> blocks_;
};

/// Mean of each bucket's real rows of H, [nodes x d].
inline Tensor pool_rows(const Tensor& h, const ChunkedSequence& seq) {
  return masked_mean(reshape(h, {seq.nodes.size(), seq.chunk, h.cols()}), seq.real);
}

/// Writes pooled long-term memory for every bucket with at least one real row,
/// zeroes its short-term memory, and advances its last-update time to the
/// latest covered snapshot.
inline void pool_long_memory(const Tensor& h, const ChunkedSequence& seq, MemoryStore& mem) {
  const Tensor pooled = pool_rows(h, seq);
  const std::size_t d = mem.dim(), n = seq.chunk;
  for (std::size_t g = 0; g < seq.nodes.size(); ++g) {
    double latest = kNegInf;
    for (std::size_t w = 0; w < n; ++w)
      if (seq.real[g * n + w]) latest = std::max(latest, seq.time[g * n + w]);
    if (latest == kNegInf) continue;
    const NodeId node = seq.nodes[g];
    auto lt = mem.long_term(node);
    for (std::size_t c = 0; c < d; ++c) lt[c] = pooled.at(g, c);
    std::fill(mem.short_term(node).begin(), mem.short_term(node).end(), 0.0);
    mem.set_last_update(node, std::max(mem.last_update(node), latest));
  }
}

}  // namespace ilore
