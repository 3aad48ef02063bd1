// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "attention_oracle.hpp"
#include "ilore/long_term.hpp"
#include "test_util.hpp"

namespace ilore {
namespace {

using testing::dense_identity_attention;
using testing::random_snapshots;
using testing::random_tensor;

struct Rig {
  ParameterStore store;
  Rng rng;
  TimeEncoding time;
  LongTermUpdater up;

  Rig(TransformerConfig cfg, std::uint64_t seed = 1, std::size_t dt = 4)
      : rng(seed), time(TimeEncoding::create(store, "time", dt)), up(store, "long", cfg, time, rng) {}
};

TransformerConfig small(std::size_t n, std::size_t d = 4, std::size_t heads = 2, std::size_t blocks = 1) {
  TransformerConfig c;
  c.blocks = blocks;
  c.heads = heads;
  c.dim = d;
  c.ffn_dim = 2 * d;
  c.chunk = n;
  c.ranges = 3;
  return c;
}

TEST(ResortPadChunk, SpecLayoutTwoNodes) {
  // A = node 0 at windows 0 and 2, B = node 1 at window 1, fed out of order.
  std::vector<SnapshotKey> keys{{1, 1, 5.0}, {0, 2, 8.0}, {0, 0, 1.0}};
  Tensor mem({3, 2}, {10, 11, 20, 21, 30, 31});
  auto seq = resort_pad_chunk(keys, mem, 3);
  EXPECT_EQ(seq.nodes, (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(seq.real, (std::vector<bool>{true, false, true, false, true, false}));
  EXPECT_EQ(seq.rows.to_vector(), (std::vector<double>{30, 31, 0, 0, 20, 21, 0, 0, 10, 11, 0, 0}));
  EXPECT_EQ(seq.position_of, (std::vector<std::size_t>{4, 2, 0}));
  EXPECT_EQ(seq.time[0], 1.0);
  EXPECT_EQ(seq.time[1], kNegInf);
  for (std::size_t r = 0; r < seq.size(); ++r) EXPECT_EQ(seq.window_of(r), r % 3);
}

TEST(ResortPadChunk, FullyUpdatedNodeHasNoPads) {
  std::vector<SnapshotKey> keys{{7, 0, 1}, {7, 1, 2}, {7, 2, 3}, {7, 3, 4}};
  auto seq = resort_pad_chunk(keys, Tensor::full({4, 1}, 1.0), 4);
  EXPECT_EQ(seq.real, std::vector<bool>(4, true));
}

TEST(ResortPadChunk, ChunkAdmissibleRange) {
  EXPECT_EQ(chunk_admissible_range(5, 4), (std::pair<std::size_t, std::size_t>{0, 7}));
  EXPECT_EQ(chunk_admissible_range(2, 4), (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ(chunk_admissible_range(9, 4), (std::pair<std::size_t, std::size_t>{4, 11}));
}

TEST(ResortPadChunk, RejectsBadInput) {
  EXPECT_THROW(resort_pad_chunk({{0, 3, 1.0}}, Tensor::zeros({1, 2}), 3), ContractError);
  EXPECT_THROW(resort_pad_chunk({{0, 1, 1.0}, {0, 1, 2.0}}, Tensor::zeros({2, 2}), 3), ContractError);
  EXPECT_THROW(resort_pad_chunk({{0, 1, 1.0}}, Tensor::zeros({2, 2}), 3), DimensionError);
}

TEST(IdentityAttention, SingleRealRowReturnsItsValue) {
  Rig rig(small(3, 4, 1));
  auto seq = resort_pad_chunk({{2, 1, 4.0}}, Tensor::row({0.3, -0.2, 0.5, 0.1}), 3);
  const auto& blk = rig.up.blocks()[0];
  Tensor out = rig.up.attention(blk, seq.rows, identity_layout(seq), rig.up.position_table());
  Tensor value = blk.out(matmul(slice_rows(seq.rows, 1, 2), blk.w_value));
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(out.at(1, c), value[c], 1e-15);
    EXPECT_EQ(out.at(0, c), 0.0);
    EXPECT_EQ(out.at(2, c), 0.0);
  }
}

TEST(IdentityAttention, LaterWindowsGetExactlyZeroWeight) {
  Rig rig(small(4, 4, 2));
  testing::randomize(rig.store, rig.rng, 0.8);
  Rng rng(4);
  auto snap = random_snapshots(rng, 4, 4, 4);
  auto seq = resort_pad_chunk(snap.keys, snap.memories, 4);
  auto lay = identity_layout(seq);
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor w = rig.up.attention_weights(rig.up.blocks()[0], seq.rows, lay, h);
    for (std::size_t g = 0; g < lay.groups; ++g)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) EXPECT_EQ(w[(g * 4 + i) * 4 + j], 0.0);
  }
}

TEST(IdentityAttention, MatchesDenseOracleOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.index(6);
    const std::size_t heads = 1 + rng.index(2);
    const std::size_t d = heads * (1 + rng.index(4));
    TransformerConfig cfg = small(n, d, heads);
    cfg.gaussian_range = rng.bernoulli(0.5);
    Rig rig(cfg, seed, 1 + rng.index(4));
    testing::randomize(rig.store, rng, 0.7);
    auto snap = random_snapshots(rng, 5, n, d);
    auto seq = resort_pad_chunk(snap.keys, snap.memories, n);
    Tensor x = random_tensor({seq.size(), d}, rng, -1.0, 1.0, false);
    const auto& blk = rig.up.blocks()[0];
    Tensor got = rig.up.attention(blk, x, identity_layout(seq), rig.up.position_table());
    auto want = dense_identity_attention(rig.up, blk, x, seq);
    EXPECT_LT(testing::max_abs_diff(got.data(), want.out), 1e-10) << "seed " << seed;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (!seq.real[i]) continue;
      double total = 0.0;
      for (double w : want.weights[0][i]) total += w;
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Transformer, ZeroOutputProjectionsGiveIdentity) {
  Rig rig(small(3, 4, 2, 2));
  for (const auto& blk : rig.up.blocks())
    for (Tensor t : {blk.out.weight, blk.out.bias, blk.ffn2.weight, blk.ffn2.bias})
      for (double& v : t.mutable_data()) v = 0.0;
  Rng rng(3);
  auto snap = random_snapshots(rng, 4, 3, 4);
  auto seq = resort_pad_chunk(snap.keys, snap.memories, 3);
  Tensor h = rig.up.encode(seq.rows, identity_layout(seq));
  EXPECT_EQ(h.shape(), seq.rows.shape());
  EXPECT_EQ(h.to_vector(), seq.rows.to_vector());
}

TEST(Transformer, PadRowsStayZero) {
  Rig rig(small(4, 4, 2, 3));
  testing::randomize(rig.store, rig.rng, 0.6);
  Rng rng(5);
  auto snap = random_snapshots(rng, 5, 4, 4);
  auto seq = resort_pad_chunk(snap.keys, snap.memories, 4);
  Tensor h = rig.up.encode(seq.rows, identity_layout(seq));
  for (std::size_t r = 0; r < seq.size(); ++r)
    if (!seq.real[r])
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h.at(r, c), 0.0);
}

TEST(Transformer, CausalInWindowOrder) {
  Rig rig(small(4, 4, 2, 2));
  testing::randomize(rig.store, rig.rng, 0.6);
  std::vector<SnapshotKey> keys{{0, 0, 1.0}, {0, 1, 2.0}, {0, 2, 3.0}, {0, 3, 4.0}};
  Rng rng(6);
  Tensor mem = random_tensor({4, 4}, rng, -1.0, 1.0, false);
  auto base = rig.up.encode(resort_pad_chunk(keys, mem, 4).rows, identity_layout(resort_pad_chunk(keys, mem, 4)));
  auto v = mem.to_vector();
  v[2 * 4 + 1] += 0.5;  // perturb window 2
  auto seq2 = resort_pad_chunk(keys, Tensor({4, 4}, v), 4);
  auto pert = rig.up.encode(seq2.rows, identity_layout(seq2));
  for (std::size_t w = 0; w < 4; ++w) {
    bool same = true;
    for (std::size_t c = 0; c < 4; ++c) same = same && base.at(w, c) == pert.at(w, c);
    EXPECT_EQ(same, w < 2) << "window " << w;
  }
}

TEST(Transformer, NoCrossIdentityLeakage) {
  Rig rig(small(3, 4, 2, 2));
  testing::randomize(rig.store, rig.rng, 0.6);
  std::vector<SnapshotKey> keys{{0, 0, 1.0}, {0, 2, 3.0}, {5, 1, 2.0}, {5, 2, 3.5}};
  Rng rng(7);
  Tensor mem = random_tensor({4, 4}, rng, -1.0, 1.0, false);
  auto seq = resort_pad_chunk(keys, mem, 3);
  Tensor a = pool_rows(rig.up.encode(seq.rows, identity_layout(seq)), seq);
  auto v = mem.to_vector();
  for (std::size_t c = 8; c < 16; ++c) v[c] = -v[c] * 3.0;
  auto seq2 = resort_pad_chunk(keys, Tensor({4, 4}, v), 3);
  Tensor b = pool_rows(rig.up.encode(seq2.rows, identity_layout(seq2)), seq2);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(a.at(0, c), b.at(0, c));
    EXPECT_NE(a.at(1, c), b.at(1, c));
  }
}

TEST(Transformer, TrailingPadWindowsAreNeutral) {
  // Sinusoidal slot offsets do not depend on n, so a longer all-pad tail is
  // the only difference between the two runs.
  std::vector<SnapshotKey> keys{{0, 0, 1.0}, {0, 1, 2.0}, {3, 1, 2.5}};
  Rng rng(8);
  Tensor mem = random_tensor({3, 4}, rng, -1.0, 1.0, false);
  std::vector<Tensor> pooled;
  for (std::size_t n : {2, 5}) {
    TransformerConfig cfg = small(n, 4, 2, 2);
    cfg.gaussian_range = false;
    Rig rig(cfg, 11);
    auto seq = resort_pad_chunk(keys, mem, n);
    pooled.push_back(pool_rows(rig.up.encode(seq.rows, identity_layout(seq)), seq));
  }
  EXPECT_LT(testing::max_abs_diff(pooled[0].data(), pooled[1].data()), 1e-12);
}

TEST(Pooling, MeansRealRowsAndResetsShortTerm) {
  std::vector<SnapshotKey> keys{{1, 0, 2.0}, {2, 0, 3.0}, {2, 2, 6.0}};
  auto seq = resort_pad_chunk(keys, Tensor::zeros({3, 2}), 3);
  // H rows: node 1 -> one real row, node 2 -> two identical real rows.
  Tensor h({6, 2}, {4, 5, 99, 99, 99, 99, 7, 8, 99, 99, 7, 8});
  MemoryStore mem(4, 2);
  for (NodeId v = 0; v < 4; ++v) {
    mem.short_term(v)[0] = 1.0;
    mem.set_last_update(v, 1.0);
  }
  mem.long_term(3)[1] = -4.0;
  pool_long_memory(h, seq, mem);
  EXPECT_EQ(mem.long_term(1)[0], 4.0);
  EXPECT_EQ(mem.long_term(1)[1], 5.0);
  EXPECT_EQ(mem.long_term(2)[0], 7.0);
  EXPECT_EQ(mem.long_term(2)[1], 8.0);
  for (NodeId v : {1u, 2u}) EXPECT_EQ(mem.short_term(v)[0], 0.0);
  EXPECT_EQ(mem.last_update(1), 2.0);
  EXPECT_EQ(mem.last_update(2), 6.0);
  // Untouched nodes keep everything.
  EXPECT_EQ(mem.short_term(0)[0], 1.0);
  EXPECT_EQ(mem.long_term(3)[1], -4.0);
  EXPECT_EQ(mem.last_update(3), 1.0);
}

TEST(Pooling, MemoryStartsAtZero) {
  MemoryStore mem(3, 4);
  for (NodeId v = 0; v < 3; ++v) {
    for (double x : mem.short_term(v)) EXPECT_EQ(x, 0.0);
    for (double x : mem.long_term(v)) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(mem.last_update(v), 0.0);
  }
}

TEST(Transformer, PooledScalarGradientsMatchFiniteDifferences) {
  Rig rig(small(3, 4, 2, 2), 21);
  testing::randomize(rig.store, rig.rng, 0.5);
  Rng rng(22);
  auto snap = random_snapshots(rng, 3, 3, 4);
  auto seq = resort_pad_chunk(snap.keys, snap.memories, 3);
  auto lay = identity_layout(seq);
  Tensor w = random_tensor({seq.nodes.size(), 4}, rng, -1.0, 1.0, false);
  auto loss = [&] { return sum(mul(pool_rows(rig.up.encode(seq.rows, lay), seq), w)); };
  for (auto& [name, p] : rig.store)
    EXPECT_LT(grad_check([&](const Tensor&) { return loss(); }, p, 1e-4), 1e-3) << name;
}

TEST(Transformer, HeadsMustDivideDim) {
  ParameterStore store;
  Rng rng(1);
  auto te = TimeEncoding::create(store, "time", 2);
  EXPECT_THROW(LongTermUpdater(store, "long", small(3, 5, 2), te, rng), ConfigError);
}

TEST(FullLayout, CausalInTimeOnly) {
  std::vector<SnapshotKey> keys{{4, 0, 1.0}, {2, 1, 3.0}, {4, 1, 3.0}};
  auto lay = full_layout(keys);
  EXPECT_TRUE(lay.allowed(0, 1, 0));
  EXPECT_TRUE(lay.allowed(0, 1, 2));
  EXPECT_TRUE(lay.allowed(0, 2, 1));
  EXPECT_FALSE(lay.allowed(0, 0, 1));
}

}  // namespace
}  // namespace ilore
