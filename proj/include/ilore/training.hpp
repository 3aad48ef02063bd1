// SPDX-License-Identifier: Apache-2.0
//
// Streaming link-prediction training and evaluation.
//
// Batch k is scored against memory that has absorbed batches 0..k-1 only: at
// each step the previous batch's events are folded into memory (with
// gradient), then the current batch is recorded into the neighbor history and
// scored. Memory carried past that step is detached.

#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ilore/event_store.hpp"
#include "ilore/metrics.hpp"
#include "ilore/model.hpp"
#include "ilore/parameters.hpp"
#include "ilore/rng.hpp"

namespace ilore {

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 200;
  double learning_rate = 1e-4;
  std::size_t epochs = 20;
  std::size_t patience = 5;
  double inductive_fraction = 0.1;
  std::uint64_t seed = 0;
  bool record_timing = false;  // ms_per_batch column of metrics.csv (wall clock, not reproducible)

  void validate() const {
    model.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (batch_size % model.chunk != 0)
      throw ConfigError("batch_size " + std::to_string(batch_size) +
                        " must be divisible by chunk " + std::to_string(model.chunk));
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(inductive_fraction >= 0.0 && inductive_fraction < 1.0))
      throw ConfigError("inductive_fraction must lie in [0, 1)");
  }
};

// ---------------------------------------------------------------- negatives

/// Sorted distinct destinations of the selected events.
inline std::vector<NodeId> destination_set(const EventStream& s, std::span<const std::size_t> idx) {
  std::set<NodeId> dst;
  for (std::size_t k : idx) dst.insert(s.events.at(k).dst);
  return {dst.begin(), dst.end()};
}

/// One uniformly drawn destination per event.
inline std::vector<NodeId> negative_sample(std::size_t m, std::span<const NodeId> universe, Rng& rng) {
  if (universe.empty()) throw ContractError("negative_sample: empty node universe");
  std::vector<NodeId> out(m);
  for (auto& v : out) v = universe[rng.index(universe.size())];
  return out;
}

// ---------------------------------------------------------------- one step

struct BatchOutput {
  MemoryUpdate update;
  Tensor pos_logits;  // [m x 1], undefined when not scored
  Tensor neg_logits;
  Tensor loss;        // summed binary cross-entropy
};

/// Folds `pending` into memory, records `batch` into the history, and (when
/// `negatives` is non-empty) scores batch against its negatives.
inline BatchOutput forward_batch(const Model& model, StreamState& st, std::span<const Event> pending,
                                 std::span<const Event> batch, std::span<const NodeId> negatives,
                                 GateMode mode, Rng& gate_rng, const GateOptions& gate = {}) {
  BatchOutput out;
  out.update = model.update_memory(pending, st, mode, gate_rng, gate);
  for (const Event& e : batch) st.neighbors.record_event(e);
  if (negatives.empty()) return out;
  if (negatives.size() != batch.size())
    throw DimensionError("forward_batch: one negative per event required");
  const std::size_t m = batch.size();
  std::vector<NodeId> ids(3 * m);
  std::vector<double> times(3 * m);
  for (std::size_t k = 0; k < m; ++k) {
    ids[k] = batch[k].src;
    ids[m + k] = batch[k].dst;
    ids[2 * m + k] = negatives[k];
    times[k] = times[m + k] = times[2 * m + k] = batch[k].t;
  }
  const Tensor z = model.embed(ids, times, st, &out.update);
  const Tensor z_src = slice_rows(z, 0, m);
  out.pos_logits = model.link_logits(z_src, slice_rows(z, m, 2 * m));
  out.neg_logits = model.link_logits(z_src, slice_rows(z, 2 * m, 3 * m));
  out.loss = bce_with_logits(out.pos_logits, out.neg_logits);
  return out;
}

// ---------------------------------------------------------------- passes

struct PassResult {
  double loss = 0.0;               // summed over scored events
  std::vector<double> pos, neg;    // probabilities, aligned with `scored`
  std::vector<std::size_t> scored; // stream index of each scored event
  GateStats gate;
  std::size_t batches = 0;
  double milliseconds = 0.0;

  double mean_loss() const { return scored.empty() ? 0.0 : loss / static_cast<double>(scored.size()); }
  double ms_per_batch() const { return batches == 0 ? 0.0 : milliseconds / static_cast<double>(batches); }

  /// Interleaved (pos_k, neg_k) scores and their labels, optionally restricted.
  void ranking(std::vector<double>& scores, std::vector<int>& labels,
               const std::function<bool(std::size_t)>& keep = {}) const {
    scores.clear();
    labels.clear();
    for (std::size_t k = 0; k < scored.size(); ++k) {
      if (keep && !keep(scored[k])) continue;
      scores.push_back(pos[k]);
      labels.push_back(1);
      scores.push_back(neg[k]);
      labels.push_back(0);
    }
  }
  double ap(const std::function<bool(std::size_t)>& keep = {}) const {
    std::vector<double> s;
    std::vector<int> l;
    ranking(s, l, keep);
    return average_precision(s, l);
  }
  double auc(const std::function<bool(std::size_t)>& keep = {}) const {
    std::vector<double> s;
    std::vector<int> l;
    ranking(s, l, keep);
    return roc_auc(s, l);
  }
};

enum class PassKind {
  Train,   // train gating, gradient steps
  Score,   // eval gating, scored, no gradient
  Warmup,  // eval gating, memory only
};

/// Streams batches over a fixed event stream while carrying the state and the
/// not-yet-absorbed pending batch from pass to pass.
class Streamer {
 public:
  Streamer(const Model& model, const EventStream& stream, std::size_t batch_size)
      : model_(model), stream_(stream), batch_size_(batch_size),
        state_(model.fresh_state(stream.num_nodes)) {}

  void reset() {
    state_ = model_.fresh_state(stream_.num_nodes);
    pending_.clear();
  }

  StreamState& state() { return state_; }
  const std::vector<Event>& pending() const { return pending_; }

  /// `negatives`: Score passes take one fixed negative per index; Train passes
  /// draw from `universe` with `neg_rng`.
  PassResult run(std::span<const std::size_t> indices, PassKind kind, Rng& gate_rng,
                 std::span<const NodeId> negatives = {}, std::span<const NodeId> universe = {},
                 Rng* neg_rng = nullptr, Adam* optimizer = nullptr, ParameterStore* params = nullptr) {
    PassResult res;
    if (kind == PassKind::Score && negatives.size() != indices.size())
      throw DimensionError("Streamer::run: fixed negatives must align with indices");
    if (kind == PassKind::Train && (!optimizer || !params || !neg_rng))
      throw ContractError("Streamer::run: training needs an optimizer, parameters and a sampler");
    const GateMode mode = kind == PassKind::Train ? GateMode::Train : GateMode::Eval;
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t b = 0; b < indices.size(); b += batch_size_) {
      const std::size_t e = std::min(indices.size(), b + batch_size_);
      std::vector<Event> batch;
      batch.reserve(e - b);
      for (std::size_t k = b; k < e; ++k) batch.push_back(stream_.events.at(indices[k]));

      std::vector<NodeId> negs;
      if (kind == PassKind::Train) negs = negative_sample(batch.size(), universe, *neg_rng);
      if (kind == PassKind::Score) negs.assign(negatives.begin() + b, negatives.begin() + e);

      BatchOutput out;
      if (kind == PassKind::Train) {
        out = forward_batch(model_, state_, pending_, batch, negs, mode, gate_rng);
        const double loss = out.loss.item();
        if (!std::isfinite(loss)) throw NumericError(diagnose(res.batches, loss, *params));
        backward(out.loss);
        optimizer->step(*params);
        params->zero_grad();
      } else {
        NoGradGuard guard;
        out = forward_batch(model_, state_, pending_, batch, negs, mode, gate_rng);
        if (out.loss.defined() && !std::isfinite(out.loss.item()))
          throw NumericError(diagnose(res.batches, out.loss.item(), model_.parameters()));
      }
      res.gate += out.update.gate;
      if (out.loss.defined()) {
        res.loss += out.loss.item();
        for (std::size_t k = 0; k < batch.size(); ++k) {
          res.pos.push_back(1.0 / (1.0 + std::exp(-out.pos_logits[k])));
          res.neg.push_back(1.0 / (1.0 + std::exp(-out.neg_logits[k])));
          res.scored.push_back(indices[b + k]);
        }
      }
      pending_ = std::move(batch);
      ++res.batches;
    }
    res.milliseconds =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return res;
  }

 private:
  static std::string diagnose(std::size_t batch, double loss, const ParameterStore& params) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at batch " << batch << "; parameter norms:";
    for (const auto& [name, t] : params) {
      double sq = 0.0;
      for (double v : t.data()) sq += v * v;
      os << ' ' << name << '=' << std::sqrt(sq);
    }
    return os.str();
  }

  const Model& model_;
  const EventStream& stream_;
  std::size_t batch_size_;
  StreamState state_;
  std::vector<Event> pending_;
};

// ---------------------------------------------------------------- fitting

struct MetricsRow {
  std::string epoch;  // number, or "final"
  std::string split;
  double loss = 0.0;
  double ap = 0.0;
  double auc = 0.0;
  double skip_rate = 0.0;
  double ms_per_batch = 0.0;  // wall clock
};

/// `timing` false leaves ms_per_batch empty so the file is reproducible bit for bit.
inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows, bool timing) {
  os << "epoch,split,loss,AP,AUC,skip_rate,ms_per_batch\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.10f,%.10f,%.10f,%.10f,", r.epoch.c_str(), r.split.c_str(),
                  r.loss, r.ap, r.auc, r.skip_rate);
    os << buf;
    if (timing) {
      std::snprintf(buf, sizeof buf, "%.3f", r.ms_per_batch);
      os << buf;
    }
    os << '\n';
  }
}

struct FitResult {
  std::vector<MetricsRow> rows;
  std::vector<double> epoch_losses;  // mean train loss per epoch
  std::size_t best_epoch = 0;
  double best_val_ap = 0.0;
  double test_ap = 0.0;
  double test_auc = 0.0;
  std::optional<double> test_inductive_ap;
  double val_ap = 0.0;
  double test_skip_rate = 0.0;
  GateStats train_gate;  // of the last epoch
};

/// Fixed per-split negatives drawn once from the split's destination set.
inline std::vector<NodeId> fixed_negatives(const EventStream& s, std::span<const std::size_t> idx,
                                           std::uint64_t seed) {
  if (idx.empty()) return {};
  Rng rng(seed);
  return negative_sample(idx.size(), destination_set(s, idx), rng);
}

inline std::vector<std::size_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = begin + k;
  return v;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t k = 0) {
  // splitmix64 finalizer over a simple combination
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream * 0xBF58476D1CE4E5B9ULL + k;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Scores val and test with the current parameters after an eval-mode replay
/// of the training events.
inline void evaluate_final(const Model& model, const EventStream& s, const Splits& sp,
                           const TrainConfig& cfg, FitResult& fit) {
  if (sp.val_end == sp.val_begin || sp.test_end == sp.test_begin)
    throw UndefinedError("evaluate: empty validation or test split");
  Streamer streamer(model, s, cfg.batch_size);
  const auto val_idx = index_range(sp.val_begin, sp.val_end);
  const auto test_idx = index_range(sp.test_begin, sp.test_end);
  Rng gate_rng(mix_seed(cfg.seed, 3));
  streamer.run(sp.train, PassKind::Warmup, gate_rng);
  const PassResult val =
      streamer.run(val_idx, PassKind::Score, gate_rng, fixed_negatives(s, val_idx, mix_seed(cfg.seed, 1)));
  const PassResult test = streamer.run(test_idx, PassKind::Score, gate_rng,
                                       fixed_negatives(s, test_idx, mix_seed(cfg.seed, 2)));
  auto row = [&](const PassResult& r, const std::string& split) {
    return MetricsRow{"final", split, r.mean_loss(), r.ap(), r.auc(), r.gate.skip_rate(),
                      r.ms_per_batch()};
  };
  fit.rows.push_back(row(val, "val"));
  fit.rows.push_back(row(test, "test"));
  fit.val_ap = fit.rows[fit.rows.size() - 2].ap;
  fit.test_ap = fit.rows.back().ap;
  fit.test_auc = fit.rows.back().auc;
  fit.test_skip_rate = test.gate.skip_rate();
  const auto inductive = [&](std::size_t k) { return sp.touches_inductive(s.events[k]); };
  bool any = false;
  for (std::size_t k : test.scored) any = any || inductive(k);
  if (any) {
    MetricsRow m = row(test, "test_inductive");
    std::vector<double> sc;
    std::vector<int> lb;
    test.ranking(sc, lb, inductive);
    m.ap = average_precision(sc, lb);
    m.auc = roc_auc(sc, lb);
    double loss = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < test.scored.size(); ++k)
      if (inductive(test.scored[k])) {
        loss -= std::log(test.pos[k]) + std::log1p(-test.neg[k]);
        ++cnt;
      }
    m.loss = loss / static_cast<double>(cnt);
    fit.test_inductive_ap = m.ap;
    fit.rows.push_back(m);
  }
}

/// Epoch loop with early stopping on validation AP; leaves the best parameters
/// in the model and appends the final val/test rows.
inline FitResult fit(Model& model, const EventStream& s, const Splits& sp, const TrainConfig& cfg,
                     const std::function<void(const MetricsRow&)>& on_row = {}) {
  cfg.validate();
  if (sp.train.empty()) throw ConfigError("fit: empty training split");
  FitResult fit;
  ParameterStore& params = model.parameters();
  Adam adam(cfg.learning_rate);
  const auto val_idx = index_range(sp.val_begin, sp.val_end);
  const std::vector<NodeId> train_universe = destination_set(s, sp.train);
  const std::vector<NodeId> val_negatives = fixed_negatives(s, val_idx, mix_seed(cfg.seed, 1));
  ParameterStore best = params.clone();
  double best_ap = -1.0;
  std::size_t stale = 0;
  Streamer streamer(model, s, cfg.batch_size);
  auto emit = [&](MetricsRow r) {
    if (on_row) on_row(r);
    fit.rows.push_back(std::move(r));
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    streamer.reset();
    Rng gate_rng(mix_seed(cfg.seed, 10, epoch));
    Rng neg_rng(mix_seed(cfg.seed, 11, epoch));
    const PassResult tr = streamer.run(sp.train, PassKind::Train, gate_rng, {}, train_universe,
                                       &neg_rng, &adam, &params);
    emit({std::to_string(epoch), "train", tr.mean_loss(), tr.ap(), tr.auc(), tr.gate.skip_rate(),
          tr.ms_per_batch()});
    fit.epoch_losses.push_back(tr.mean_loss());
    fit.train_gate = tr.gate;

    if (val_idx.empty()) continue;
    const PassResult va = streamer.run(val_idx, PassKind::Score, gate_rng, val_negatives);
    const double val_ap = va.ap();
    emit({std::to_string(epoch), "val", va.mean_loss(), val_ap, va.auc(), va.gate.skip_rate(),
          va.ms_per_batch()});
    if (val_ap > best_ap) {
      best_ap = val_ap;
      fit.best_epoch = epoch;
      best = params.clone();
      stale = 0;
    } else if (++stale >= cfg.patience && cfg.patience > 0) {
      break;
    }
  }
  if (best_ap >= 0.0) params.copy_values_from(best);
  fit.best_val_ap = best_ap;
  if (sp.test_end > sp.test_begin && sp.val_end > sp.val_begin) {
    evaluate_final(model, s, sp, cfg, fit);
    if (on_row)
      for (const auto& r : fit.rows)
        if (r.epoch == "final") on_row(r);
  }
  return fit;
}

// ---------------------------------------------------------------- node classification

struct ClassificationResult {
  double test_auc = 0.0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
};

/// Streams every event through the frozen model, embeds the source of each
/// labeled event at its time, fits a fresh two-layer head on the training
/// range and reports AUC on the test range.
inline ClassificationResult classify_nodes(const Model& model, const EventStream& s, const Splits& sp,
                                           const TrainConfig& cfg, std::size_t head_epochs = 200,
                                           double head_lr = 1e-2) {
  if (!s.has_labels()) throw ConfigError("classify_nodes: stream carries no state labels");
  const std::size_t d = model.config().dim;
  std::vector<double> z;
  std::vector<int> y;
  std::vector<std::size_t> where;
  {
    NoGradGuard guard;
    StreamState st = model.fresh_state(s.num_nodes);
    Rng gate_rng(mix_seed(cfg.seed, 4));
    std::vector<Event> pending;
    for (std::size_t b = 0; b < s.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(s.size(), b + cfg.batch_size);
      std::vector<Event> batch(s.events.begin() + static_cast<std::ptrdiff_t>(b),
                               s.events.begin() + static_cast<std::ptrdiff_t>(e));
      const BatchOutput out = forward_batch(model, st, pending, batch, {}, GateMode::Eval, gate_rng);
      std::vector<NodeId> ids;
      std::vector<double> times;
      for (std::size_t k = b; k < e; ++k)
        if (s.events[k].label) {
          ids.push_back(s.events[k].src);
          times.push_back(s.events[k].t);
          y.push_back(*s.events[k].label != 0 ? 1 : 0);
          where.push_back(k);
        }
      if (!ids.empty()) {
        const Tensor zb = model.embed(ids, times, st, &out.update);
        z.insert(z.end(), zb.data().begin(), zb.data().end());
      }
      pending = std::move(batch);
    }
  }
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t r = 0; r < where.size(); ++r) {
    if (where[r] < sp.val_begin) train_rows.push_back(r);
    if (where[r] >= sp.test_begin && where[r] < sp.test_end) test_rows.push_back(r);
  }
  if (train_rows.empty() || test_rows.empty())
    throw UndefinedError("classify_nodes: no labeled events in the train or test range");
  auto rows_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> v(rows.size() * d);
    for (std::size_t k = 0; k < rows.size(); ++k)
      std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(rows[k] * d), d, v.begin() + k * d);
    return Tensor({rows.size(), d}, std::move(v));
  };
  const Tensor x_train = rows_of(train_rows), x_test = rows_of(test_rows);
  std::vector<double> y_train(train_rows.size());
  for (std::size_t k = 0; k < train_rows.size(); ++k) y_train[k] = y[train_rows[k]];
  const Tensor target = Tensor::column(y_train);
  const Tensor one_minus = Tensor::column([&] {
    std::vector<double> v(y_train.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = 1.0 - y_train[k];
    return v;
  }());

  ParameterStore head_params;
  Rng rng(mix_seed(cfg.seed, 5));
  const Mlp2 head = Mlp2::create(head_params, "head", d, d, 1, rng);
  Adam adam(head_lr);
  for (std::size_t it = 0; it < head_epochs; ++it) {
    const Tensor logit = head(x_train);
    // -[y log s(x) + (1 - y) log(1 - s(x))] = y softplus(-x) + (1 - y) softplus(x)
    const Tensor loss = scale(add(sum(mul(target, softplus(neg(logit)))),
                                  sum(mul(one_minus, softplus(logit)))),
                              1.0 / static_cast<double>(train_rows.size()));
    backward(loss);
    adam.step(head_params);
    head_params.zero_grad();
  }
  NoGradGuard guard;
  const Tensor scores = head(x_test);
  std::vector<int> y_test(test_rows.size());
  for (std::size_t k = 0; k < test_rows.size(); ++k) y_test[k] = y[test_rows[k]];
  ClassificationResult res;
  res.test_auc = roc_auc(scores.data(), y_test);
  res.train_examples = train_rows.size();
  res.test_examples = test_rows.size();
  return res;
}

// ---------------------------------------------------------------- long-term experiment

struct LongTermColumn {
  double fraction = 0.0;
  std::size_t events = 0;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double ap = 0.0;
};

struct LongTermResult {
  std::vector<LongTermColumn> columns;
  std::vector<double> dropped;     // fractions whose subgraph had nothing to score
  std::optional<double> p_value;   // absent when the table is degenerate
  std::string note;
};

/// Per fraction: keep events between top-frequency nodes, replay the first 85%
/// in eval mode, score the rest. A success is a positive outscoring its paired
/// negative; the success/failure table across fractions gets a chi-square test.
inline LongTermResult longterm_experiment(const Model& model, const EventStream& s,
                                          const TrainConfig& cfg, std::span<const double> fractions) {
  LongTermResult res;
  for (double f : fractions) {
    const EventStream sub = frequency_subgraph(s, f);
    const std::size_t r = sub.size();
    const auto b = static_cast<std::size_t>(std::floor(0.85 * static_cast<double>(r) + 1e-9));
    if (r == 0 || b >= r) {
      res.dropped.push_back(f);
      continue;
    }
    Streamer streamer(model, sub, cfg.batch_size);
    Rng gate_rng(mix_seed(cfg.seed, 6));
    const auto warm = index_range(0, b), test = index_range(b, r);
    streamer.run(warm, PassKind::Warmup, gate_rng);
    const PassResult pr =
        streamer.run(test, PassKind::Score, gate_rng, fixed_negatives(sub, test, mix_seed(cfg.seed, 7)));
    LongTermColumn col;
    col.fraction = f;
    col.events = r;
    col.trials = pr.scored.size();
    for (std::size_t k = 0; k < pr.scored.size(); ++k) col.successes += pr.pos[k] > pr.neg[k] ? 1 : 0;
    col.ap = pr.ap();
    res.columns.push_back(col);
  }
  std::vector<std::array<double, 2>> table;
  for (const auto& c : res.columns)
    table.push_back({static_cast<double>(c.successes), static_cast<double>(c.trials - c.successes)});
  try {
    res.p_value = chi_square_pvalue(table);
  } catch (const UndefinedError& e) {
    res.note = e.what();
  }
  return res;
}

// ---------------------------------------------------------------- ablations

struct AblationRow {
  std::string variant;  // "full" or "w/o <flag>"
  std::string split;
  double ap = 0.0;
  double skip_rate = 0.0;
};

/// Applies one ablation flag (SM, GRE, IA, ReO) to a model config.
inline void apply_ablation(ModelConfig& m, const std::string& flag) {
  if (flag == "SM") m.state_module = false;
  else if (flag == "GRE") m.gaussian_range = false;
  else if (flag == "IA") m.identity_attention = false;
  else if (flag == "ReO") m.reoccurrence = false;
  else throw ConfigError("unknown ablation variant '" + flag + "' (expected SM, GRE, IA or ReO)");
}

/// Trains the full model and every requested variant under the same seed and
/// splits; one row per variant per split.
inline std::vector<AblationRow> ablate(const EventStream& s, const Splits& sp, const TrainConfig& base,
                                       const std::vector<std::string>& variants) {
  std::vector<std::string> names{""};
  for (const auto& v : variants) {
    ModelConfig probe = base.model;
    apply_ablation(probe, v);
    names.push_back(v);
  }
  std::vector<AblationRow> rows;
  for (const auto& v : names) {
    TrainConfig cfg = base;
    if (!v.empty()) apply_ablation(cfg.model, v);
    Model model(cfg.model);
    const FitResult f = fit(model, s, sp, cfg);
    const std::string label = v.empty() ? "full" : "w/o " + v;
    rows.push_back({label, "val", f.val_ap, f.train_gate.skip_rate()});
    rows.push_back({label, "test", f.test_ap, f.test_skip_rate});
    if (f.test_inductive_ap) rows.push_back({label, "test_inductive", *f.test_inductive_ap, f.test_skip_rate});
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,split,AP,skip_rate\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.10f,%.10f\n", r.variant.c_str(), r.split.c_str(), r.ap,
                  r.skip_rate);
    os << buf;
  }
}

}  // namespace ilore
