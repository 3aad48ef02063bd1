// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics and the 2xK chi-square independence test.

#pragma once

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "ilore/error.hpp"

namespace ilore {

/// Mean precision at the rank of every positive, scores descending, ties kept
/// in input order.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r)
    if (labels[order[r]] != 0) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  if (hits == 0) throw UndefinedError("average_precision: no positive labels");
  return total / static_cast<double>(hits);
}

/// P(score of a random positive > score of a random negative), ties count 1/2.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("roc_auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Count (pos, neg) pairs with pos above neg, ties 1/2, one block of equal scores at a time.
  double wins = 0.0, negatives_below = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double p = 0.0, n = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? p : n) += 1.0;
      ++j;
    }
    wins += p * negatives_below + 0.5 * p * n;
    negatives_below += n;
    pos += static_cast<std::size_t>(p);
    neg += static_cast<std::size_t>(n);
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedError("roc_auc: needs both classes");
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Pearson chi-square test of independence on a 2 x K table; returns the upper
/// tail probability with K - 1 degrees of freedom.
inline double chi_square_pvalue(std::span<const std::array<double, 2>> columns) {
  const std::size_t K = columns.size();
  if (K < 2) throw UndefinedError("chi_square_pvalue: need at least two columns");
  std::array<double, 2> row{0.0, 0.0};
  std::vector<double> col(K, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (int r = 0; r < 2; ++r) {
      if (columns[k][r] < 0.0) throw ContractError("chi_square_pvalue: negative count");
      row[r] += columns[k][r];
      col[k] += columns[k][r];
    }
  const double total = row[0] + row[1];
  if (row[0] == 0.0 || row[1] == 0.0 ||
      std::any_of(col.begin(), col.end(), [](double c) { return c == 0.0; }))
    throw UndefinedError("chi_square_pvalue: zero marginal");
  double stat = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    for (int r = 0; r < 2; ++r) {
      const double expected = row[r] * col[k] / total;
      const double diff = columns[k][r] - expected;
      stat += diff * diff / expected;
    }
  return boost::math::gamma_q(0.5 * static_cast<double>(K - 1), 0.5 * stat);
}

}  // namespace ilore
