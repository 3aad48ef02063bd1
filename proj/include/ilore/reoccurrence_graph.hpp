// SPDX-License-Identifier: Apache-2.0
//
// Graph embedding over historical neighbors. Each neighbor contributes the
// tuple [h_j | e_ij | Phi(t - t_j) | f(count_ij)], where f is a small MLP on
// the pairwise re-occurrence count; a multi-head attention pools the tuples
// against the query [h_i | Phi(0)] and an MLP merges the result with h_i.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ilore/encodings.hpp"
#include "ilore/event_store.hpp"
#include "ilore/layers.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

/// Three-layer perceptron 1 -> d -> d -> d with ReLU on the hidden layers.
struct ReoccurrenceEncoder {
  Linear fc1, fc2, fc3;

  static ReoccurrenceEncoder create(ParameterStore& store, const std::string& name, std::size_t dim,
                                    Rng& rng) {
    return {Linear::create(store, name + ".fc1", 1, dim, rng),
            Linear::create(store, name + ".fc2", dim, dim, rng),
            Linear::create(store, name + ".fc3", dim, dim, rng)};
  }

  /// counts: [m x 1] -> [m x d]
  Tensor operator()(const Tensor& counts) const { return fc3(relu(fc2(relu(fc1(counts))))); }
};

struct GraphLayerParams {
  Tensor w_query;  // [(d + d_t) x d]
  Tensor w_key;    // [(d + d_e + d_t + d) x d]
  Tensor w_value;  // [(d + d_e + d_t + d) x d]
  Linear out;      // [d x d]
  Mlp2 merge;      // [2d -> d -> d]
};

struct GraphConfig {
  std::size_t dim = 100;
  std::size_t edge_dim = 1;
  std::size_t layers = 1;
  std::size_t neighbors = 10;
  std::size_t heads = 2;
  bool reoccurrence = true;  // false drops f(count) from the neighbor tuple (ablation)
};

/// One neighbor as seen by a single graph layer.
struct NeighborInput {
  Tensor h;                       // [1 x d], the neighbor's previous-layer representation
  std::vector<double> edge_feat;  // d_e
  double delta_t = 0.0;           // t - t_j
  double count = 1.0;             // re-occurrence count at t_j
};

/// Returns [ids x d] rows of long-term memory (h^0) for the requested nodes.
using MemoryLookup = std::function<Tensor(const std::vector<NodeId>&)>;

class GraphEmbedder {
 public:
  GraphEmbedder(ParameterStore& store, const std::string& name, const GraphConfig& cfg,
                const TimeEncoding& time_enc, Rng& rng)
      : cfg_(cfg), time_enc_(time_enc) {
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0)
      throw ConfigError("graph dim must be divisible by the head count");
    if (cfg.neighbors == 0) throw ConfigError("neighbor count must be >= 1");
    const std::size_t d = cfg.dim, dt = time_enc.dim();
    const std::size_t fq = d + dt, fk = d + cfg.edge_dim + dt + d;
    reo_ = ReoccurrenceEncoder::create(store, name + ".reoccurrence", d, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      GraphLayerParams lp;
      lp.w_query = store.add_uniform(p + ".w_query", {fq, d}, 1.0 / std::sqrt(double(fq)), rng);
      lp.w_key = store.add_uniform(p + ".w_key", {fk, d}, 1.0 / std::sqrt(double(fk)), rng);
      lp.w_value = store.add_uniform(p + ".w_value", {fk, d}, 1.0 / std::sqrt(double(fk)), rng);
      lp.out = Linear::create(store, p + ".out", d, d, rng);
      lp.merge = Mlp2::create(store, p + ".merge", 2 * d, d, d, rng);
      layers_.push_back(std::move(lp));
    }
  }

  const GraphConfig& config() const { return cfg_; }
  const ReoccurrenceEncoder& reoccurrence_encoder() const { return reo_; }
  const std::vector<GraphLayerParams>& layers() const { return layers_; }

  /// f(R): [m x 1] counts -> [m x d].
  Tensor encode_reoccurrence(const Tensor& counts) const { return reo_(counts); }

  /// Batched layer. self: [Q x d]; neighbor_h: [Q*N x d] in slot order; slots
  /// beyond counts[q] are ignored. Neighbor order within a query never changes
  /// the result: slots are visited in a canonical order of their input values.
  Tensor layer(std::size_t l, const Tensor& self, const Tensor& neighbor_h,
               const std::vector<std::size_t>& counts, std::span<const double> edge_feats,
               std::span<const double> deltas, std::span<const double> reo_counts) const {
    const GraphLayerParams& lp = layers_.at(l);
    const std::size_t Q = self.rows(), N = cfg_.neighbors, d = cfg_.dim, de = cfg_.edge_dim;
    const std::size_t H = cfg_.heads, dh = d / H;
    if (self.cols() != d || neighbor_h.rows() != Q * N || neighbor_h.cols() != d ||
        counts.size() != Q || edge_feats.size() != Q * N * de || deltas.size() != Q * N ||
        reo_counts.size() != Q * N)
      throw DimensionError("graph_attention_layer: inconsistent neighbor tensors");

    const Tensor phi = time_enc_.encode(deltas);
    const Tensor edges({Q * N, de}, std::vector<double>(edge_feats.begin(), edge_feats.end()));
    std::vector<Tensor> parts{neighbor_h, edges, phi};
    if (cfg_.reoccurrence)
      parts.push_back(reo_(Tensor::column(std::vector<double>(reo_counts.begin(), reo_counts.end()))));
    Tensor feats = concat(parts);

    // Canonical slot order per query: lexicographic on the tuple values.
    std::vector<std::size_t> perm(Q * N);
    const std::size_t F = feats.cols();
    const auto fv = feats.data();
    for (std::size_t q = 0; q < Q; ++q) {
      auto first = perm.begin() + static_cast<std::ptrdiff_t>(q * N);
      std::iota(first, first + static_cast<std::ptrdiff_t>(N), q * N);
      std::sort(first, first + static_cast<std::ptrdiff_t>(counts[q]),
                [&](std::size_t a, std::size_t b) {
                  return std::lexicographical_compare(fv.begin() + a * F, fv.begin() + (a + 1) * F,
                                                      fv.begin() + b * F, fv.begin() + (b + 1) * F);
                });
    }
    feats = gather_rows(feats, perm);

    const Tensor w_key = cfg_.reoccurrence ? lp.w_key : slice_rows(lp.w_key, 0, F);
    const Tensor w_value = cfg_.reoccurrence ? lp.w_value : slice_rows(lp.w_value, 0, F);
    const Tensor zero_time = time_enc_.encode(std::vector<double>(Q, 0.0));
    const Tensor q = matmul(concat({self, zero_time}), lp.w_query);
    const Tensor k = matmul(feats, w_key);
    const Tensor v = matmul(feats, w_value);

    std::vector<double> mask(Q * N, kMasked);
    for (std::size_t qi = 0; qi < Q; ++qi)
      for (std::size_t s = 0; s < counts[qi]; ++s) mask[qi * N + s] = 0.0;
    const Tensor mask_t({Q, 1, N}, std::move(mask));
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < H; ++h) {
      const Tensor qh = reshape(slice_cols(q, h * dh, (h + 1) * dh), {Q, 1, dh});
      const Tensor kh = reshape(slice_cols(k, h * dh, (h + 1) * dh), {Q, N, dh});
      const Tensor vh = reshape(slice_cols(v, h * dh, (h + 1) * dh), {Q, N, dh});
      const Tensor w = softmax(add(scale(bmm(qh, kh, true), inv_scale), mask_t));
      heads.push_back(reshape(bmm(w, vh), {Q, dh}));
    }
    // A query with no neighbors gets all-zero weights, hence a zero pooled vector.
    std::vector<double> has(Q);
    for (std::size_t qi = 0; qi < Q; ++qi) has[qi] = counts[qi] > 0 ? 1.0 : 0.0;
    const Tensor pooled = mul(lp.out(concat(heads)), Tensor::column(std::move(has)));
    return lp.merge(concat({self, pooled}));
  }

  /// Single-query convenience form of layer().
  Tensor graph_attention_layer(std::size_t l, const Tensor& h_i,
                               const std::vector<NeighborInput>& neighbors) const {
    const std::size_t N = cfg_.neighbors, d = cfg_.dim;
    if (neighbors.size() > N)
      throw ContractError("graph_attention_layer: more neighbors than configured slots");
    std::vector<Tensor> rows;
    std::vector<double> feats(N * cfg_.edge_dim, 0.0), deltas(N, 0.0), reo(N, 0.0);
    for (std::size_t s = 0; s < neighbors.size(); ++s) {
      const auto& nb = neighbors[s];
      if (nb.edge_feat.size() != cfg_.edge_dim)
        throw DimensionError("graph_attention_layer: edge feature width mismatch");
      rows.push_back(nb.h);
      std::copy(nb.edge_feat.begin(), nb.edge_feat.end(), feats.begin() + s * cfg_.edge_dim);
      deltas[s] = nb.delta_t;
      reo[s] = nb.count;
    }
    if (neighbors.size() < N) rows.push_back(Tensor::zeros({N - neighbors.size(), d}));
    return layer(l, h_i, concat(rows, 0), {neighbors.size()}, feats, deltas, reo);
  }

  /// z_i(t) for every (ids[q], times[q]): h^0 from `memory`, then `layers`
  /// graph layers. Every hop reads history strictly before the query time.
  Tensor embed(const std::vector<NodeId>& ids, const std::vector<double>& times,
               const NeighborStore& store, const MemoryLookup& memory, std::size_t layers) const {
    if (ids.size() != times.size()) throw DimensionError("embed: ids/times length mismatch");
    if (layers > layers_.size())
      throw ConfigError("embed: requested " + std::to_string(layers) + " layers, model has " +
                        std::to_string(layers_.size()));
    if (layers == 0) return memory(ids);

    const std::size_t Q = ids.size(), N = cfg_.neighbors, de = cfg_.edge_dim;
    std::vector<NodeId> all_ids = ids;
    std::vector<double> all_times = times;
    std::vector<std::size_t> counts(Q), gather(Q * N, 0);
    std::vector<double> feats(Q * N * de, 0.0), deltas(Q * N, 0.0), reo(Q * N, 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
      const auto nbs = store.recent_neighbors(ids[q], times[q], N);
      counts[q] = nbs.size();
      for (std::size_t s = 0; s < nbs.size(); ++s) {
        const auto& e = nbs[s];
        gather[q * N + s] = all_ids.size();
        all_ids.push_back(e.neighbor);
        all_times.push_back(times[q]);
        const auto f = store.features(e.record);
        std::copy(f.begin(), f.end(), feats.begin() + (q * N + s) * de);
        deltas[q * N + s] = times[q] - e.t;
        reo[q * N + s] = static_cast<double>(e.count);
      }
    }
    const Tensor prev = embed(all_ids, all_times, store, memory, layers - 1);
    const Tensor self = slice_rows(prev, 0, Q);
    const std::size_t zero_row = all_ids.size();
    for (std::size_t q = 0; q < Q; ++q)
      for (std::size_t s = counts[q]; s < N; ++s) gather[q * N + s] = zero_row;
    const Tensor neighbor_h = gather_rows(concat({prev, Tensor::zeros({1, cfg_.dim})}, 0), gather);
    return layer(layers - 1, self, neighbor_h, counts, feats, deltas, reo);
  }

 private:
  static constexpr double kMasked = -std::numeric_limits<double>::infinity();

  GraphConfig cfg_;
  TimeEncoding time_enc_;
  ReoccurrenceEncoder reo_;
  std::vector<GraphLayerParams> layers_;
};

}  // namespace ilore
