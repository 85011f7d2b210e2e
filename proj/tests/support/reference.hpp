#pragma once

// Independent long-double oracles. Deliberately naive: no shared code with the
// library's numerics.

#include <cmath>
#include <cstddef>
#include <vector>

namespace ebosal::testing::ref {

inline long double log_sum_exp(const std::vector<long double>& x) {
  long double s = 0.0L;
  for (long double v : x) s += std::exp(v);
  return std::log(s);
}

inline long double entropy(const std::vector<long double>& logits) {
  long double z = 0.0L;
  for (long double v : logits) z += std::exp(v);
  long double h = 0.0L;
  for (long double v : logits) {
    const long double p = std::exp(v) / z;
    if (p > 0.0L) h -= p * std::log(p);
  }
  return h;
}

inline long double cross_entropy(const std::vector<long double>& logits, std::size_t target) {
  long double z = 0.0L;
  for (long double v : logits) z += std::exp(v);
  return -std::log(std::exp(logits[target]) / z);
}

// Pairwise count over every (unknown, known) pair, ties worth one half.
inline double brute_auroc(const std::vector<double>& unknown, const std::vector<double>& known) {
  double wins = 0.0;
  for (double u : unknown)
    for (double k : known) wins += u > k ? 1.0 : (u == k ? 0.5 : 0.0);
  return wins / (static_cast<double>(unknown.size()) * static_cast<double>(known.size()));
}

}  // namespace ebosal::testing::ref
