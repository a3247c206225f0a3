#pragma once

// Brute-force CTC oracles: enumerate all V^T paths, collapse them, and
// accumulate probability. Independent of the DP implementation.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace xmodal::testing {

inline std::vector<int> collapse_path(std::span<const int> path) {
  std::vector<int> out;
  int prev = 0;
  for (int v : path) {
    if (v != 0 && v != prev) out.push_back(v);
    prev = v;
  }
  return out;
}

// Sum of path probabilities for every collapsed string (linear domain,
// double). logp is T x V row-major.
inline std::map<std::vector<int>, double> enumerate_collapsed(std::span<const float> logp,
                                                              int frames, int vocab) {
  std::map<std::vector<int>, double> table;
  std::vector<int> path(static_cast<size_t>(frames), 0);
  for (;;) {
    double p = 0.0;
    for (int t = 0; t < frames; ++t) p += logp[static_cast<size_t>(t) * vocab + path[static_cast<size_t>(t)]];
    table[collapse_path(path)] += std::exp(p);
    int pos = frames - 1;
    while (pos >= 0) {
      if (++path[static_cast<size_t>(pos)] < vocab) break;
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return table;
}

// -log of the summed probability of paths collapsing to `target`.
inline double brute_force_ctc_loss(std::span<const float> logp, int frames, int vocab,
                                   std::span<const int> target) {
  auto table = enumerate_collapsed(logp, frames, vocab);
  std::vector<int> key(target.begin(), target.end());
  auto it = table.find(key);
  if (it == table.end() || it->second <= 0.0) return std::numeric_limits<double>::infinity();
  return -std::log(it->second);
}

// Collapsed string with the highest summed probability; margin_out reports
// the gap to the runner-up so tests can skip near-ties.
inline std::vector<int> brute_force_best_string(std::span<const float> logp, int frames, int vocab,
                                                double* margin_out = nullptr) {
  auto table = enumerate_collapsed(logp, frames, vocab);
  std::vector<int> best;
  double best_p = -1.0, second_p = -1.0;
  for (const auto& [collapsed, p] : table) {
    if (p > best_p) {
      second_p = best_p;
      best_p = p;
      best = collapsed;
    } else if (p > second_p) {
      second_p = p;
    }
  }
  if (margin_out) *margin_out = second_p <= 0 ? best_p : std::log(best_p) - std::log(second_p);
  return best;
}

}  // namespace xmodal::testing
