#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/alphabet.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

// SLUE-style scoring: entity pairs are matched per utterance with set
// semantics (duplicates collapsed); micro-F1 requires exact (tag, phrase)
// matches, label-F1 erases the phrases first.

using EntityPair = std::pair<EntityTag, std::string>;
using EntitySet = std::set<EntityPair>;

// Tolerant inverse of the corpus tagger: well-formed <open>phrase<close>
// regions become pairs; a nested open drops the outer capture; unmatched
// opens or closes are dropped; never throws on malformed input.
inline EntitySet extract_entities(std::string_view tagged) {
  EntitySet out;
  bool capturing = false;
  EntityTag tag = EntityTag::kPlace;
  std::string phrase;
  for (char c : tagged) {
    bool is_open = false;
    for (int i = 0; i < kNumEntityTags; ++i) {
      if (c == kTagOpenChars[static_cast<size_t>(i)]) {
        capturing = true;
        tag = static_cast<EntityTag>(i);
        phrase.clear();
        is_open = true;
        break;
      }
    }
    if (is_open) continue;
    if (c == kTagCloseChar) {
      if (capturing && !phrase.empty()) out.insert({tag, phrase});
      capturing = false;
      phrase.clear();
      continue;
    }
    if (capturing) phrase.push_back(c);
  }
  return out;
}

inline std::string strip_tags(std::string_view tagged) {
  std::string out;
  for (char c : tagged) {
    bool reserved = c == kTagCloseChar;
    for (char o : kTagOpenChars) reserved = reserved || c == o;
    if (!reserved) out.push_back(c);
  }
  return out;
}

struct NerScores {
  double micro_f1 = 0.0;
  double label_f1 = 0.0;
  double precision = 0.0;  // micro
  double recall = 0.0;     // micro
};

namespace detail {
inline double f1_from_counts(long tp, long fp, long fn, double* prec = nullptr,
                             double* rec = nullptr) {
  if (tp + fp + fn == 0) {  // vacuously perfect
    if (prec) *prec = 1.0;
    if (rec) *rec = 1.0;
    return 1.0;
  }
  double p = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  double r = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  if (prec) *prec = p;
  if (rec) *rec = r;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}
}  // namespace detail

// preds and golds are keyed by utterance id and must cover the same ids.
inline NerScores ner_f1(const std::map<std::string, EntitySet>& preds,
                        const std::map<std::string, EntitySet>& golds) {
  require(preds.size() == golds.size(), "ner_f1: utterance id sets differ");
  long tp = 0, fp = 0, fn = 0;
  long ltp = 0, lfp = 0, lfn = 0;
  for (const auto& [id, gold] : golds) {
    auto it = preds.find(id);
    require(it != preds.end(), "ner_f1: missing utterance id " + id);
    const EntitySet& pred = it->second;
    long match = 0;
    for (const auto& p : pred)
      if (gold.count(p)) ++match;
    tp += match;
    fp += static_cast<long>(pred.size()) - match;
    fn += static_cast<long>(gold.size()) - match;

    // label-F1: phrases erased, greedy pairing by tag = multiset intersection
    std::map<EntityTag, long> pred_tags, gold_tags;
    for (const auto& p : pred) pred_tags[p.first]++;
    for (const auto& g : gold) gold_tags[g.first]++;
    long lmatch = 0;
    for (const auto& [t, c] : pred_tags) {
      auto gt = gold_tags.find(t);
      if (gt != gold_tags.end()) lmatch += std::min(c, gt->second);
    }
    ltp += lmatch;
    lfp += static_cast<long>(pred.size()) - lmatch;
    lfn += static_cast<long>(gold.size()) - lmatch;
  }
  NerScores s;
  s.micro_f1 = detail::f1_from_counts(tp, fp, fn, &s.precision, &s.recall);
  s.label_f1 = detail::f1_from_counts(ltp, lfp, lfn);
  return s;
}

// Macro-averaged F1 over the three sentiment classes. A class absent from
// both gold and predictions is excluded from the average; a class with any
// gold or predicted members contributes its (possibly zero) F1.
inline double sa_macro_f1(std::span<const int> pred, std::span<const int> gold,
                          int num_classes = 3) {
  require(pred.size() == gold.size(), "sa_macro_f1: length mismatch");
  require(!pred.empty(), "sa_macro_f1: empty inputs");
  double sum = 0.0;
  int included = 0;
  for (int c = 0; c < num_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      bool p = pred[i] == c, g = gold[i] == c;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    if (tp + fp + fn == 0) continue;
    sum += detail::f1_from_counts(tp, fp, fn);
    ++included;
  }
  return included > 0 ? sum / included : 1.0;
}

}  // namespace xmodal
