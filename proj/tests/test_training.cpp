// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ilore/metrics.hpp"
#include "ilore/synth.hpp"
#include "ilore/training.hpp"
#include "test_util.hpp"

namespace ilore {
namespace {

ModelConfig tiny_model(std::size_t edge_dim) {
  ModelConfig m;
  m.dim = 8;
  m.time_dim = 4;
  m.edge_dim = edge_dim;
  m.ffn_dim = 16;
  m.blocks = 1;
  m.heads = 2;
  m.chunk = 3;
  m.ranges = 3;
  m.neighbors = 5;
  m.graph_heads = 2;
  return m;
}

TrainConfig tiny_train(std::size_t edge_dim, std::size_t epochs = 3) {
  TrainConfig c;
  c.model = tiny_model(edge_dim);
  c.batch_size = 30;
  c.learning_rate = 3e-3;
  c.epochs = epochs;
  c.patience = 0;
  c.seed = 4;
  return c;
}

SyntheticStream periodic_stream(std::size_t events = 450, std::uint64_t seed = 2) {
  PeriodicSpec p;
  p.users = 6;
  p.items = 6;
  p.events = events;
  p.edge_dim = 2;
  p.seed = seed;
  return periodic_bipartite(p);
}

// ---------------------------------------------------------------- losses

TEST(LinkHead, ZeroWeightsGiveOneHalf) {
  Model model(tiny_model(2));
  for (auto& [name, p] : model.parameters())
    if (name.rfind("link.", 0) == 0)
      for (double& v : p.mutable_data()) v = 0.0;
  Rng rng(1);
  const Tensor z1 = testing::random_tensor({5, 8}, rng, -3, 3, false);
  const Tensor z2 = testing::random_tensor({5, 8}, rng, -3, 3, false);
  for (double p : model.link_probability(z1, z2).to_vector()) EXPECT_EQ(p, 0.5);
}

TEST(LinkHead, MatchesHandForward) {
  Model model(tiny_model(2));
  const Mlp2& head = model.link_head();
  const Tensor ones = Tensor::full({1, 8}, 1.0);
  std::vector<double> hidden(head.first.out());
  for (std::size_t c = 0; c < hidden.size(); ++c) {
    double s = head.first.bias[c];
    for (std::size_t k = 0; k < 16; ++k) s += head.first.weight.at(k, c);
    hidden[c] = std::max(s, 0.0);
  }
  double logit = head.second.bias[0];
  for (std::size_t c = 0; c < hidden.size(); ++c) logit += hidden[c] * head.second.weight.at(c, 0);
  EXPECT_NEAR(model.link_probability(ones, ones).item(), 1.0 / (1.0 + std::exp(-logit)), 1e-14);
}

TEST(Loss, OneHalfEachSideIsTwoLogTwo) {
  const Tensor half = Tensor::column({0.5});
  EXPECT_NEAR(bce_loss(half, half).item(), 2.0 * std::log(2.0), 1e-15);
  const Tensor zero = Tensor::column({0.0});
  EXPECT_NEAR(bce_with_logits(zero, zero).item(), 2.0 * std::log(2.0), 1e-15);
}

TEST(Loss, LogitFormAgreesWithProbabilityForm) {
  Rng rng(3);
  const Tensor a = testing::random_tensor({7, 1}, rng, -6, 6, false);
  const Tensor b = testing::random_tensor({7, 1}, rng, -6, 6, false);
  EXPECT_NEAR(bce_with_logits(a, b).item(), bce_loss(sigmoid(a), sigmoid(b)).item(), 1e-11);
}

// ---------------------------------------------------------------- negatives

TEST(Negatives, UniformOverDestinationSet) {
  std::vector<NodeId> universe{3, 5, 8, 13, 21, 34, 55, 89, 144, 233};
  Rng rng(9);
  const std::size_t draws = 100000;
  std::map<NodeId, std::size_t> count;
  for (NodeId v : negative_sample(draws, universe, rng)) ++count[v];
  ASSERT_EQ(count.size(), universe.size());
  const double mean = draws / 10.0, sd = std::sqrt(draws * 0.1 * 0.9);
  for (const auto& [v, c] : count) EXPECT_LT(std::abs(static_cast<double>(c) - mean), 3.0 * sd) << v;
}

TEST(Negatives, DeterministicForSeedAndEmptyUniverseRejected) {
  std::vector<NodeId> universe{1, 2, 3};
  Rng a(5), b(5);
  EXPECT_EQ(negative_sample(50, universe, a), negative_sample(50, universe, b));
  EXPECT_THROW(negative_sample(1, std::vector<NodeId>{}, a), ContractError);
}

TEST(Negatives, DestinationSetIsSortedAndUnique) {
  EventStream s;
  for (auto [u, v] : {std::pair<NodeId, NodeId>{0, 9}, {1, 4}, {2, 9}, {3, 7}}) {
    Event e;
    e.src = u;
    e.dst = v;
    s.events.push_back(e);
  }
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  EXPECT_EQ(destination_set(s, idx), (std::vector<NodeId>{4, 7, 9}));
}

// ---------------------------------------------------------------- metrics

TEST(Metrics, AveragePrecisionExamples) {
  EXPECT_NEAR(average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{1, 0, 1}),
              (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  EXPECT_EQ(average_precision(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), 1.0);
  EXPECT_THROW(average_precision(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}), UndefinedError);
  EXPECT_THROW(average_precision(std::vector<double>{0.1}, std::vector<int>{0, 1}), DimensionError);
}

TEST(Metrics, AucExamples) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.9}, std::vector<int>{1, 0}), 0.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  EXPECT_THROW(roc_auc(std::vector<double>{0.5, 0.6}, std::vector<int>{1, 1}), UndefinedError);
}

// AP from its definition, distinct scores: mean precision at each positive.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0.0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++positives;
    int above = 0, hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        ++above;
        hits += y[j];
      }
    total += static_cast<double>(hits) / above;
  }
  return total / positives;
}

double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

TEST(Metrics, ExhaustiveAgainstPairwiseDefinitions) {
  Rng rng(11);
  for (std::size_t n = 2; n <= 8; ++n)
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = (mask >> i) & 1u;
      std::vector<double> distinct(n), tied(n);
      for (std::size_t i = 0; i < n; ++i) {
        distinct[i] = rng.uniform(0.0, 1.0);
        tied[i] = static_cast<double>(rng.index(3));
      }
      EXPECT_NEAR(average_precision(distinct, y), ap_oracle(distinct, y), 1e-12);
      EXPECT_NEAR(roc_auc(distinct, y), auc_oracle(distinct, y), 1e-12);
      EXPECT_NEAR(roc_auc(tied, y), auc_oracle(tied, y), 1e-12);
    }
}

// Upper tail of chi-square(k) by Simpson's rule on the substitution x = u^2,
// which keeps the integrand smooth at zero for every k.
double chi_square_tail_oracle(double stat, double k) {
  const double c = 2.0 / (std::pow(2.0, k / 2.0) * std::tgamma(k / 2.0));
  auto g = [&](double u) { return c * std::pow(u, k - 1.0) * std::exp(-u * u / 2.0); };
  const double top = std::sqrt(stat);
  const int steps = 4000;
  const double h = top / steps;
  double acc = g(0.0) + g(top);
  for (int i = 1; i < steps; ++i) acc += (i % 2 ? 4.0 : 2.0) * g(i * h);
  return 1.0 - acc * h / 3.0;
}

TEST(Metrics, ChiSquareKnownTable) {
  // Expected counts 15 everywhere, statistic 20/3, one degree of freedom.
  const std::vector<std::array<double, 2>> t{{10, 20}, {20, 10}};
  EXPECT_NEAR(chi_square_pvalue(t), std::erfc(std::sqrt(10.0 / 3.0)), 1e-12);
  const std::vector<std::array<double, 2>> same{{30, 10}, {60, 20}, {15, 5}};
  EXPECT_NEAR(chi_square_pvalue(same), 1.0, 1e-12);
  const std::vector<std::array<double, 2>> planted{{90, 10}, {60, 40}};
  EXPECT_LT(chi_square_pvalue(planted), 0.01);
}

TEST(Metrics, ChiSquareMatchesIntegratedDensity) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t K = 2 + rng.index(5);
    std::vector<std::array<double, 2>> t(K);
    for (auto& c : t) c = {1.0 + static_cast<double>(rng.index(40)), 1.0 + static_cast<double>(rng.index(40))};
    double r0 = 0, r1 = 0, n = 0, stat = 0;
    for (const auto& c : t) {
      r0 += c[0];
      r1 += c[1];
    }
    n = r0 + r1;
    for (const auto& c : t) {
      const double col = c[0] + c[1];
      const double e0 = r0 * col / n, e1 = r1 * col / n;
      stat += (c[0] - e0) * (c[0] - e0) / e0 + (c[1] - e1) * (c[1] - e1) / e1;
    }
    EXPECT_NEAR(chi_square_pvalue(t), chi_square_tail_oracle(stat, static_cast<double>(K - 1)), 1e-6);
  }
}

TEST(Metrics, ChiSquareDegenerateTables) {
  EXPECT_THROW(chi_square_pvalue(std::vector<std::array<double, 2>>{{5, 5}}), UndefinedError);
  EXPECT_THROW(chi_square_pvalue(std::vector<std::array<double, 2>>{{5, 0}, {7, 0}}), UndefinedError);
  EXPECT_THROW(chi_square_pvalue(std::vector<std::array<double, 2>>{{5, 3}, {0, 0}}), UndefinedError);
}

// ---------------------------------------------------------------- streaming protocol

TEST(Protocol, EveryTrainEventScoredOnceAndAbsorbedOnce) {
  const auto syn = periodic_stream();
  TrainConfig cfg = tiny_train(2);
  cfg.model.state_module = false;  // every aggregated message passes the gate
  Model model(cfg.model);
  const Splits sp = split_temporal(syn.stream, {}, 0.0);
  Streamer streamer(model, syn.stream, cfg.batch_size);
  Adam adam(cfg.learning_rate);
  Rng gate(1), neg(2);
  const auto universe = destination_set(syn.stream, sp.train);
  const PassResult r = streamer.run(sp.train, PassKind::Train, gate, {}, universe, &neg, &adam,
                                    &model.parameters());
  EXPECT_EQ(r.scored, sp.train);

  // Aggregated messages of every batch but the last, which is still pending.
  std::size_t expected = 0;
  const std::size_t B = cfg.batch_size, n = cfg.model.chunk;
  for (std::size_t b = 0; b + B < sp.train.size(); b += B)
    for (std::size_t w = 0; w < n; ++w) {
      std::set<NodeId> nodes;
      for (std::size_t k = b + w * B / n; k < b + (w + 1) * B / n; ++k) {
        nodes.insert(syn.stream.events[sp.train[k]].src);
        nodes.insert(syn.stream.events[sp.train[k]].dst);
      }
      expected += nodes.size();
    }
  EXPECT_EQ(r.gate.decisions, expected);
  EXPECT_EQ(r.gate.on, expected);
  ASSERT_EQ(streamer.pending().size(), sp.train.size() % B == 0 ? B : sp.train.size() % B);
  EXPECT_EQ(streamer.pending().back().t, syn.stream.events[sp.train.back()].t);
}

TEST(Protocol, SnapshotsAreUniquePerNodeAndWindow) {
  const auto syn = periodic_stream(120);
  Model model(tiny_model(2));
  StreamState st = model.fresh_state(syn.stream.num_nodes);
  Rng rng(3);
  const std::span<const Event> all(syn.stream.events);
  for (std::size_t b = 0; b < 120; b += 30) {
    const MemoryUpdate u = model.update_memory(all.subspan(b, 30), st, GateMode::Train, rng);
    std::set<std::pair<NodeId, std::size_t>> seen;
    for (const auto& k : u.snapshots) EXPECT_TRUE(seen.insert({k.node, k.window}).second);
    EXPECT_EQ(u.snapshots.size(), u.gate.on);
    EXPECT_EQ(u.bits.size(), u.gate.decisions);
    EXPECT_LE(u.gate.decisions, 2 * 30u);
  }
}

TEST(Protocol, ScoreIgnoresTheScoredEventItself) {
  const auto syn = periodic_stream(90);
  Model model(tiny_model(2));
  auto run = [&](const EventStream& s) {
    StreamState st = model.fresh_state(s.num_nodes);
    Rng rng(5);
    NoGradGuard guard;
    const std::span<const Event> all(s.events);
    forward_batch(model, st, {}, all.subspan(0, 30), {}, GateMode::Eval, rng);
    const std::vector<NodeId> negs(30, 7);
    return forward_batch(model, st, all.subspan(0, 30), all.subspan(30, 30), negs, GateMode::Eval, rng)
        .pos_logits.to_vector();
  };
  const auto base = run(syn.stream);
  EventStream edited = syn.stream;
  for (double& f : edited.events[44].edge_feat) f += 5.0;
  const auto after = run(edited);
  for (std::size_t k = 0; k <= 14; ++k) EXPECT_EQ(after[k], base[k]) << k;
  // Later events see it through their neighborhoods.
  bool moved = false;
  for (std::size_t k = 15; k < 30; ++k) moved = moved || after[k] != base[k];
  EXPECT_TRUE(moved);
}

TEST(Protocol, StoredMemoriesAreDetached) {
  const auto syn = periodic_stream(60);
  Model model(tiny_model(2));
  StreamState st = model.fresh_state(syn.stream.num_nodes);
  Rng rng(6);
  const std::span<const Event> all(syn.stream.events);
  const MemoryUpdate u = model.update_memory(all.subspan(0, 30), st, GateMode::Train, rng);
  ASSERT_TRUE(u.long_rows.defined());
  EXPECT_TRUE(u.long_rows.requires_grad());
  EXPECT_FALSE(st.memory.long_term_rows(u.nodes).requires_grad());
  EXPECT_EQ(st.memory.long_term_rows(u.nodes).to_vector(), u.long_rows.to_vector());
  for (NodeId v : u.nodes)
    for (double x : st.memory.short_term(v)) EXPECT_EQ(x, 0.0);
}

TEST(Protocol, ReplayedHardGatesGiveExactGradients) {
  const auto syn = periodic_stream(6);
  Model model(tiny_model(2));
  Rng init(8);
  testing::randomize(model.parameters(), init, 0.3);
  const std::span<const Event> all(syn.stream.events);
  const auto pending = all.subspan(0, 4), batch = all.subspan(4, 2);
  const std::vector<NodeId> negs{7, 8};

  std::vector<int> bits;
  {
    StreamState st = model.fresh_state(syn.stream.num_nodes);
    for (const Event& e : pending) st.neighbors.record_event(e);
    Rng rng(1);
    NoGradGuard guard;
    bits = forward_batch(model, st, pending, batch, negs, GateMode::Train, rng).update.bits;
  }
  ASSERT_GE(bits.size(), 2u);
  std::fill(bits.begin(), bits.end(), 1);
  bits[0] = 0;
  GateOptions opt;
  opt.straight_through = false;
  opt.replay = &bits;
  auto loss = [&](const Tensor&) {
    StreamState st = model.fresh_state(syn.stream.num_nodes);
    for (const Event& e : pending) st.neighbors.record_event(e);
    Rng rng(1);
    return forward_batch(model, st, pending, batch, negs, GateMode::Train, rng, opt).loss;
  };
  for (auto& [name, p] : model.parameters()) {
    model.parameters().zero_grad();
    EXPECT_LT(grad_check(loss, p, 1e-4), 1e-3) << name;
  }
}

// ---------------------------------------------------------------- fitting

TEST(Fit, LossFallsOnPeriodicStream) {
  const auto syn = periodic_stream();
  const TrainConfig cfg = tiny_train(2, 5);
  Model model(cfg.model);
  const FitResult f = fit(model, syn.stream, split_temporal(syn.stream, {}, 0.0), cfg);
  ASSERT_EQ(f.epoch_losses.size(), 5u);
  EXPECT_LT(f.epoch_losses.back(), f.epoch_losses.front());
  EXPECT_GT(f.test_ap, 0.5);
}

TEST(Fit, RerunIsBitIdentical) {
  const auto syn = periodic_stream();
  const TrainConfig cfg = tiny_train(2, 2);
  const Splits sp = split_temporal(syn.stream, {}, 0.1, cfg.seed);
  Model a(cfg.model), b(cfg.model);
  const FitResult fa = fit(a, syn.stream, sp, cfg), fb = fit(b, syn.stream, sp, cfg);
  ASSERT_EQ(fa.rows.size(), fb.rows.size());
  for (std::size_t k = 0; k < fa.rows.size(); ++k) {
    EXPECT_EQ(fa.rows[k].loss, fb.rows[k].loss);
    EXPECT_EQ(fa.rows[k].ap, fb.rows[k].ap);
    EXPECT_EQ(fa.rows[k].skip_rate, fb.rows[k].skip_rate);
  }
  std::ostringstream ca, cb;
  write_metrics_csv(ca, fa.rows, false);
  write_metrics_csv(cb, fb.rows, false);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(Fit, WithoutStateModuleNothingIsSkipped) {
  const auto syn = periodic_stream(300);
  TrainConfig cfg = tiny_train(2, 1);
  cfg.model.state_module = false;
  Model model(cfg.model);
  const FitResult f = fit(model, syn.stream, split_temporal(syn.stream, {}, 0.0), cfg);
  EXPECT_EQ(f.train_gate.skip_rate(), 0.0);
  EXPECT_EQ(f.test_skip_rate, 0.0);
  for (const auto& r : f.rows) EXPECT_EQ(r.skip_rate, 0.0);
}

TEST(Fit, RejectsBatchNotDivisibleByChunk) {
  const auto syn = periodic_stream(60);
  TrainConfig cfg = tiny_train(2, 1);
  cfg.batch_size = 31;
  Model model(cfg.model);
  EXPECT_THROW(fit(model, syn.stream, split_temporal(syn.stream), cfg), ConfigError);
}

// ---------------------------------------------------------------- downstream

EventStream labeled(const SyntheticStream& syn, bool constant) {
  EventStream s = syn.stream;
  for (Event& e : s.events) e.label = constant ? 0 : static_cast<int>(e.src % 2);
  return s;
}

// Even users only meet items 0 and 1 with features (+1, +1), odd users only
// items 2 and 3 with (-1, -1); the label is the user's parity.
EventStream two_communities(std::size_t events) {
  EventStream s;
  s.num_nodes = 12;
  s.edge_dim = 2;
  Rng rng(13);
  for (std::size_t k = 0; k < events; ++k) {
    Event e;
    e.src = static_cast<NodeId>(rng.index(8));
    const bool odd = e.src % 2;
    e.dst = static_cast<NodeId>(8 + 2 * odd + rng.index(2));
    e.t = static_cast<double>(k + 1);
    e.edge_feat = odd ? std::vector<double>{-1.0, -1.0} : std::vector<double>{1.0, 1.0};
    e.label = static_cast<int>(odd);
    s.events.push_back(std::move(e));
  }
  return s;
}

TEST(Classify, SeparableLabelsAndFrozenEncoder) {
  const EventStream s = two_communities(450);
  const TrainConfig cfg = tiny_train(2);
  Model model(cfg.model);
  const Splits sp = split_temporal(s, {}, 0.0);
  const ParameterStore before = model.parameters().clone();
  const ClassificationResult r = classify_nodes(model, s, sp, cfg);
  EXPECT_GT(r.test_auc, 0.95);
  EXPECT_EQ(r.train_examples, sp.val_begin);
  EXPECT_EQ(r.test_examples, sp.test_end - sp.test_begin);
  for (const auto& [name, p] : model.parameters()) EXPECT_EQ(p.to_vector(), before.get(name).to_vector()) << name;
}

TEST(Classify, ConstantOrMissingLabels) {
  const auto syn = periodic_stream(150);
  const TrainConfig cfg = tiny_train(2);
  Model model(cfg.model);
  const Splits sp = split_temporal(syn.stream, {}, 0.0);
  EXPECT_THROW(classify_nodes(model, labeled(syn, true), sp, cfg, 5), UndefinedError);
  EXPECT_THROW(classify_nodes(model, syn.stream, sp, cfg, 5), ConfigError);
}

TEST(LongTerm, SingleFractionLeavesTestUndefined) {
  const auto syn = periodic_stream(300);
  const TrainConfig cfg = tiny_train(2);
  Model model(cfg.model);
  const std::vector<double> one{1.0};
  const LongTermResult r = longterm_experiment(model, syn.stream, cfg, one);
  ASSERT_EQ(r.columns.size(), 1u);
  EXPECT_FALSE(r.p_value.has_value());
  EXPECT_FALSE(r.note.empty());
  EXPECT_EQ(r.columns[0].events, 300u);
  EXPECT_EQ(r.columns[0].trials, 300u - 255u);
}

TEST(LongTerm, SeveralFractionsGiveAProbability) {
  const auto syn = periodic_stream(300);
  const TrainConfig cfg = tiny_train(2);
  Model model(cfg.model);
  const std::vector<double> fr{0.5, 1.0};
  const LongTermResult r = longterm_experiment(model, syn.stream, cfg, fr);
  ASSERT_EQ(r.columns.size(), 2u);
  ASSERT_TRUE(r.p_value.has_value());
  EXPECT_GE(*r.p_value, 0.0);
  EXPECT_LE(*r.p_value, 1.0);
  for (const auto& c : r.columns) EXPECT_LE(c.successes, c.trials);
  // Same model, same seed: the experiment is a pure function of its inputs.
  const LongTermResult again = longterm_experiment(model, syn.stream, cfg, fr);
  EXPECT_EQ(*again.p_value, *r.p_value);
}

TEST(Ablate, FullPlusEachVariant) {
  const auto syn = periodic_stream(300);
  const TrainConfig cfg = tiny_train(2, 1);
  const Splits sp = split_temporal(syn.stream, {}, 0.0);
  const auto rows = ablate(syn.stream, sp, cfg, {"SM", "ReO"});
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].variant, "full");
  EXPECT_EQ(rows[2].variant, "w/o SM");
  EXPECT_EQ(rows[3].skip_rate, 0.0);
  EXPECT_EQ(rows[5].variant, "w/o ReO");
  EXPECT_THROW(ablate(syn.stream, sp, cfg, {"XYZ"}), ConfigError);
}

}  // namespace
}  // namespace ilore
