#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/tensor.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

// CTC over a T x V matrix of log-probabilities with blank fixed at index 0
// and target symbols in [1, V). DP runs in double per the numerics policy
// for long summations.

inline constexpr int kCtcBlank = 0;

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

inline int ctc_min_frames(std::span<const int> target) {
  int dups = 0;
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++dups;
  return static_cast<int>(target.size()) + dups;
}

inline bool ctc_feasible(int frames, std::span<const int> target) {
  return frames >= ctc_min_frames(target);
}

struct CtcLossResult {
  float loss = 0.0f;
  std::vector<float> dloss_dlogp;  // T x V
};

// Forward-backward over the blank-extended target; returns -log P(target)
// and its gradient with respect to the input log-probabilities.
inline CtcLossResult ctc_forward_backward(std::span<const float> logp, int frames, int vocab,
                                          std::span<const int> target) {
  require(frames >= 1 && vocab >= 2, "ctc: empty input");
  require(logp.size() == static_cast<size_t>(frames) * vocab, "ctc: matrix size mismatch");
  require(!target.empty(), "ctc: empty target");
  for (int s : target) require(s >= 1 && s < vocab, "ctc: target symbol out of range");
  require(ctc_feasible(frames, target),
          "ctc: infeasible target (needs " + std::to_string(ctc_min_frames(target)) +
              " frames, got " + std::to_string(frames) + ")");

  const double kNegInf = -std::numeric_limits<double>::infinity();
  const int s_len = 2 * static_cast<int>(target.size()) + 1;
  auto ext_sym = [&](int s) { return s % 2 == 0 ? kCtcBlank : target[static_cast<size_t>(s / 2)]; };
  auto lp = [&](int t, int v) { return static_cast<double>(logp[static_cast<size_t>(t) * vocab + v]); };

  std::vector<double> alpha(static_cast<size_t>(frames) * s_len, kNegInf);
  std::vector<double> beta(static_cast<size_t>(frames) * s_len, kNegInf);
  auto a = [&](int t, int s) -> double& { return alpha[static_cast<size_t>(t) * s_len + s]; };
  auto b = [&](int t, int s) -> double& { return beta[static_cast<size_t>(t) * s_len + s]; };

  a(0, 0) = lp(0, kCtcBlank);
  if (s_len > 1) a(0, 1) = lp(0, ext_sym(1));
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = a(t - 1, s);
      if (s >= 1) acc = log_add(acc, a(t - 1, s - 1));
      if (s >= 2 && ext_sym(s) != kCtcBlank && ext_sym(s) != ext_sym(s - 2))
        acc = log_add(acc, a(t - 1, s - 2));
      if (acc != kNegInf) a(t, s) = acc + lp(t, ext_sym(s));
    }
  }
  double log_prob = log_add(a(frames - 1, s_len - 1), s_len > 1 ? a(frames - 1, s_len - 2) : kNegInf);
  require(log_prob != kNegInf, "ctc: no feasible alignment");

  b(frames - 1, s_len - 1) = lp(frames - 1, ext_sym(s_len - 1));
  if (s_len > 1) b(frames - 1, s_len - 2) = lp(frames - 1, ext_sym(s_len - 2));
  for (int t = frames - 2; t >= 0; --t) {
    for (int s = 0; s < s_len; ++s) {
      double acc = b(t + 1, s);
      if (s + 1 < s_len) acc = log_add(acc, b(t + 1, s + 1));
      if (s + 2 < s_len && ext_sym(s + 2) != kCtcBlank && ext_sym(s + 2) != ext_sym(s))
        acc = log_add(acc, b(t + 1, s + 2));
      if (acc != kNegInf) b(t, s) = acc + lp(t, ext_sym(s));
    }
  }

  // gamma(t, v) = P(paths emitting v at t | target) ; dL/dlogp = -gamma
  CtcLossResult res;
  res.loss = static_cast<float>(-log_prob);
  if (res.loss < 0.0f && res.loss > -1e-5f) res.loss = 0.0f;  // f32 rounding at P=1
  res.dloss_dlogp.assign(static_cast<size_t>(frames) * vocab, 0.0f);
  for (int t = 0; t < frames; ++t) {
    std::vector<double> occ(static_cast<size_t>(vocab), kNegInf);
    for (int s = 0; s < s_len; ++s) {
      if (a(t, s) == kNegInf || b(t, s) == kNegInf) continue;
      // alpha and beta both include lp(t, sym); remove one copy
      double val = a(t, s) + b(t, s) - lp(t, ext_sym(s));
      occ[static_cast<size_t>(ext_sym(s))] = log_add(occ[static_cast<size_t>(ext_sym(s))], val);
    }
    for (int v = 0; v < vocab; ++v) {
      if (occ[static_cast<size_t>(v)] == kNegInf) continue;
      res.dloss_dlogp[static_cast<size_t>(t) * vocab + v] =
          static_cast<float>(-std::exp(occ[static_cast<size_t>(v)] - log_prob));
    }
  }
  return res;
}

// Tape integration; logp rows must already be normalized (log-softmax).
inline TensorId ctc_loss(Tape& tape, TensorId logp, std::span<const int> target) {
  int frames = tape.rows(logp), vocab = tape.cols(logp);
  auto vals = tape.value(logp);
  for (int t = 0; t < frames; ++t) {
    double lse = -std::numeric_limits<double>::infinity();
    for (int v = 0; v < vocab; ++v) lse = log_add(lse, vals[static_cast<size_t>(t) * vocab + v]);
    require(std::abs(lse) < 1e-4, "ctc: input rows are not normalized log-probabilities");
  }
  CtcLossResult res = ctc_forward_backward(vals, frames, vocab, target);
  return tape.custom_scalar(logp, res.loss, res.dloss_dlogp, "ctc_loss");
}

// ---------------------------------------------------------------------------
// decoding

inline std::vector<int> greedy_decode(std::span<const float> logp, int frames, int vocab) {
  std::vector<int> out;
  int prev = kCtcBlank;
  for (int t = 0; t < frames; ++t) {
    const float* row = logp.data() + static_cast<size_t>(t) * vocab;
    int best = 0;
    for (int v = 1; v < vocab; ++v)
      if (row[v] > row[best]) best = v;
    if (best != kCtcBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

// Incremental language-model interface used for shallow fusion. Symbols are
// decoder ids in [1, V); states are opaque.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  virtual uint32_t start() const = 0;
  virtual std::pair<float, uint32_t> score(uint32_t state, int symbol) const = 0;
};

struct BeamParams {
  float alpha = 1.5f;  // LM weight
  float beta = 0.0f;   // per-symbol length bonus
  int width = 16;
};

// Prefix beam search over collapsed prefixes, tracking blank/non-blank
// probability mass separately. Fused ranking score is
// log P_ctc + alpha * log P_lm + beta * |prefix|.
inline std::vector<int> beam_decode(std::span<const float> logp, int frames, int vocab,
                                    const LmScorer* lm, const BeamParams& params) {
  require(params.width >= 1, "beam_decode: beam width must be >= 1");
  require(logp.size() == static_cast<size_t>(frames) * vocab, "beam_decode: matrix size mismatch");
  const double kNegInf = -std::numeric_limits<double>::infinity();

  struct Hyp {
    double pb = -std::numeric_limits<double>::infinity();   // prob of ending in blank
    double pnb = -std::numeric_limits<double>::infinity();  // prob of ending in non-blank
    double lm_sum = 0.0;
    uint32_t lm_state = 0;
  };
  // std::map keys (symbol strings) give deterministic iteration and stable
  // tie-breaking.
  using Beam = std::map<std::string, Hyp>;

  auto fused = [&](const std::string& prefix, const Hyp& h) {
    return log_add(h.pb, h.pnb) + params.alpha * h.lm_sum + params.beta * static_cast<double>(prefix.size());
  };

  Beam beam;
  Hyp root;
  root.pb = 0.0;
  root.lm_state = lm ? lm->start() : 0;
  beam.emplace(std::string(), root);

  for (int t = 0; t < frames; ++t) {
    const float* row = logp.data() + static_cast<size_t>(t) * vocab;
    Beam next;
    for (const auto& [prefix, hyp] : beam) {
      double total = log_add(hyp.pb, hyp.pnb);
      // stay on the same prefix via blank
      {
        Hyp& nh = next[prefix];
        if (nh.pb == kNegInf && nh.pnb == kNegInf) {
          nh.lm_sum = hyp.lm_sum;
          nh.lm_state = hyp.lm_state;
        }
        nh.pb = log_add(nh.pb, total + row[kCtcBlank]);
      }
      // stay on the same prefix via repeated last symbol
      if (!prefix.empty()) {
        int last = static_cast<unsigned char>(prefix.back());
        Hyp& nh = next[prefix];
        nh.pnb = log_add(nh.pnb, hyp.pnb + row[last]);
      }
      // extend with a new symbol
      for (int v = 1; v < vocab; ++v) {
        std::string ext = prefix;
        ext.push_back(static_cast<char>(v));
        double from = (!prefix.empty() && v == static_cast<unsigned char>(prefix.back()))
                          ? hyp.pb  // repeat needs a blank in between
                          : total;
        if (from == kNegInf) continue;
        auto it = next.find(ext);
        if (it == next.end()) {
          Hyp nh;
          if (lm) {
            auto [lp, st] = lm->score(hyp.lm_state, v);
            nh.lm_sum = hyp.lm_sum + lp;
            nh.lm_state = st;
          }
          it = next.emplace(std::move(ext), nh).first;
        }
        it->second.pnb = log_add(it->second.pnb, from + row[v]);
      }
    }
    // prune
    if (static_cast<int>(next.size()) > params.width) {
      std::vector<std::pair<double, const std::string*>> ranked;
      ranked.reserve(next.size());
      for (const auto& [prefix, hyp] : next) ranked.emplace_back(fused(prefix, hyp), &prefix);
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& x, const auto& y) { return x.first > y.first; });
      Beam pruned;
      for (int i = 0; i < params.width; ++i) pruned.emplace(*ranked[static_cast<size_t>(i)].second,
                                                            next[*ranked[static_cast<size_t>(i)].second]);
      next = std::move(pruned);
    }
    beam = std::move(next);
  }

  const std::string* best = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, hyp] : beam) {
    double sc = fused(prefix, hyp);
    if (best == nullptr || sc > best_score) {
      best = &prefix;
      best_score = sc;
    }
  }
  std::vector<int> out;
  if (best) {
    out.reserve(best->size());
    for (char c : *best) out.push_back(static_cast<unsigned char>(c));
  }
  return out;
}

}  // namespace xmodal
