// SPDX-License-Identifier: Apache-2.0
//
// Train on a small synthetic stream and print the held-out AP.

#include <iostream>

#include "ilore/ilore.hpp"

int main() {
  ilore::PeriodicSpec spec;
  spec.events = 1000;
  const ilore::SyntheticStream syn = ilore::periodic_bipartite(spec);

  ilore::TrainConfig cfg;
  cfg.model.dim = 16;
  cfg.model.time_dim = 16;
  cfg.model.ffn_dim = 32;
  cfg.model.edge_dim = syn.stream.edge_dim;
  cfg.batch_size = 50;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 3;
  cfg.inductive_fraction = 0.0;

  const ilore::Splits splits = ilore::split_temporal(syn.stream, {}, cfg.inductive_fraction, cfg.seed);
  ilore::Model model(cfg.model);
  const ilore::FitResult fit = ilore::fit(model, syn.stream, splits, cfg, [](const ilore::MetricsRow& r) {
    std::cout << "epoch " << r.epoch << ' ' << r.split << "  loss " << r.loss << "  AP " << r.ap << '\n';
  });
  std::cout << "test AP " << fit.test_ap << " (skip rate " << fit.test_skip_rate << ")\n";
}
