#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmodal/util.hpp"

namespace xmodal {

// Character n-gram language model with interpolated Kneser-Ney smoothing and
// a single fixed discount. Symbols are small integer ids over a closed
// alphabet; two internal ids are appended for end-of-sentence and unknown,
// plus a begin-of-sentence id that only ever appears in contexts. The
// interpolation chain terminates in a uniform distribution over the
// prediction alphabet, so P(.|context) sums to one for every context.

class NgramModel {
 public:
  static constexpr uint32_t kFileVersion = 1;

  NgramModel() = default;
  NgramModel(int order, int alphabet_size, double discount, bool mle_mode)
      : order_(order), alphabet_size_(alphabet_size), discount_(discount), mle_mode_(mle_mode) {
    require(order_ >= 1, "ngram: order must be >= 1");
    require(alphabet_size_ >= 1, "ngram: empty alphabet");
  }

  int order() const { return order_; }
  int alphabet_size() const { return alphabet_size_; }
  int eos_id() const { return alphabet_size_; }
  int bos_id() const { return alphabet_size_ + 1; }
  int unk_id() const { return alphabet_size_ + 2; }
  // symbols that can be predicted: alphabet + EOS + UNK
  int prediction_vocab() const { return alphabet_size_ + 2; }

  // ---- training ----

  struct TrainOptions {
    int order = 4;
    double discount = 0.75;
    bool mle_mode = false;               // tests only: raw relative frequencies
    bool sentence_markers = true;        // pad with BOS, count EOS
  };

  static NgramModel train(const std::vector<std::vector<int>>& corpus, int alphabet_size,
                          const TrainOptions& opts) {
    require(!corpus.empty(), "ngram: empty training corpus");
    NgramModel m(opts.order, alphabet_size, opts.discount, opts.mle_mode);

    // raw counts at the highest order
    for (const auto& sentence : corpus) {
      std::vector<int> seq;
      if (opts.sentence_markers)
        seq.assign(static_cast<size_t>(opts.order - 1), m.bos_id());
      for (int s : sentence) {
        require(s >= 0 && s < alphabet_size, "ngram: training symbol out of alphabet");
        seq.push_back(s);
      }
      if (opts.sentence_markers) seq.push_back(m.eos_id());
      size_t ctx_len = static_cast<size_t>(opts.order - 1);
      size_t first = opts.sentence_markers ? ctx_len : 0;
      for (size_t i = first; i < seq.size(); ++i) {
        size_t c0 = i >= ctx_len ? i - ctx_len : 0;
        std::string ctx;
        for (size_t j = c0; j < i; ++j) ctx.push_back(static_cast<char>(seq[j]));
        m.level(opts.order).bump(ctx, seq[i]);
      }
    }

    // continuation (type) counts for the lower levels, derived top-down
    for (int k = opts.order - 1; k >= 1; --k) {
      const Table& upper = m.level(k + 1);
      Table& lower = m.level(k);
      for (const auto& [ctx, row] : upper.rows) {
        if (ctx.empty()) continue;  // cannot shorten further
        std::string shorter = ctx.substr(1);
        for (const auto& [sym, cnt] : row.counts) {
          (void)cnt;
          lower.bump(shorter, sym);  // one type per distinct left extension
        }
      }
    }
    return m;
  }

  // ---- scoring ----

  // context holds the most recent symbols, oldest first; only the last
  // order-1 are used. Symbols outside the alphabet are mapped to UNK.
  double log_prob(std::span<const int> context, int symbol) const {
    int sym = normalize_symbol(symbol);
    size_t use = std::min(context.size(), static_cast<size_t>(order_ - 1));
    std::string ctx;
    for (size_t i = context.size() - use; i < context.size(); ++i)
      ctx.push_back(static_cast<char>(normalize_context_symbol(context[i])));
    if (mle_mode_) {
      const Table& t = level(static_cast<int>(ctx.size()) + 1);
      auto it = t.rows.find(ctx);
      require(it != t.rows.end(), "ngram: unseen context in MLE mode");
      auto jt = it->second.counts.find(sym);
      double c = jt == it->second.counts.end() ? 0.0 : jt->second;
      return std::log(c / it->second.total);
    }
    return std::log(prob_interp(ctx, sym));
  }

  double prob(std::span<const int> context, int symbol) const {
    return std::exp(log_prob(context, symbol));
  }

  // Whole-sentence log-probability including the end marker.
  double sentence_log_prob(std::span<const int> sentence) const {
    std::vector<int> ctx(static_cast<size_t>(order_ - 1), bos_id());
    double total = 0.0;
    for (int s : sentence) {
      total += log_prob(ctx, s);
      ctx.push_back(normalize_context_symbol(s));
    }
    total += log_prob(ctx, eos_id());
    return total;
  }

  // Perplexity per predicted symbol (sentence symbols + one EOS each).
  double perplexity(const std::vector<std::vector<int>>& corpus) const {
    double lp = 0.0;
    size_t n = 0;
    for (const auto& s : corpus) {
      lp += sentence_log_prob(s);
      n += s.size() + 1;
    }
    return std::exp(-lp / static_cast<double>(n));
  }

  // ---- incremental interface for beam fusion ----
  // State packs up to 3 recent symbols plus a length, so order <= 4.

  uint32_t start_state() const {
    uint32_t st = 0;
    int n = std::min(order_ - 1, 3);
    for (int i = 0; i < n; ++i) st = push_state(st, static_cast<uint32_t>(bos_id()));
    return st;
  }

  std::pair<double, uint32_t> score(uint32_t state, int symbol) const {
    require(order_ <= 4, "ngram: incremental state supports order <= 4");
    std::vector<int> ctx = unpack_state(state);
    double lp = log_prob(ctx, symbol);
    uint32_t next = push_state(state, static_cast<uint32_t>(normalize_context_symbol(symbol)));
    return {lp, next};
  }

  // ---- serialization ----

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail("cannot write LM file " + path.string());
    os.write("XMNG", 4);
    write_pod<uint32_t>(os, kFileVersion);
    write_pod<int32_t>(os, order_);
    write_pod<int32_t>(os, alphabet_size_);
    write_pod<double>(os, discount_);
    write_pod<uint8_t>(os, mle_mode_ ? 1 : 0);
    for (int k = 1; k <= order_; ++k) {
      const Table& t = level(k);
      write_pod<uint32_t>(os, static_cast<uint32_t>(t.rows.size()));
      for (const auto& [ctx, row] : t.rows) {
        write_string(os, ctx);
        write_pod<uint32_t>(os, static_cast<uint32_t>(row.counts.size()));
        for (const auto& [sym, cnt] : row.counts) {
          write_pod<uint8_t>(os, static_cast<uint8_t>(sym));
          write_pod<uint32_t>(os, cnt);
        }
      }
    }
    if (!os) fail("short write to LM file " + path.string());
  }

  static NgramModel load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail("cannot open LM file " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "XMNG", 4) != 0) fail("not an LM file: " + path.string());
    uint32_t version = read_pod<uint32_t>(is);
    if (version != kFileVersion) fail("unsupported LM file version");
    int order = read_pod<int32_t>(is);
    int alphabet = read_pod<int32_t>(is);
    double discount = read_pod<double>(is);
    bool mle = read_pod<uint8_t>(is) != 0;
    NgramModel m(order, alphabet, discount, mle);
    for (int k = 1; k <= order; ++k) {
      uint32_t rows = read_pod<uint32_t>(is);
      for (uint32_t i = 0; i < rows; ++i) {
        std::string ctx = read_string(is);
        uint32_t entries = read_pod<uint32_t>(is);
        for (uint32_t j = 0; j < entries; ++j) {
          int sym = read_pod<uint8_t>(is);
          uint32_t cnt = read_pod<uint32_t>(is);
          Table& t = m.level(k);
          auto& row = t.rows[ctx];
          row.counts[sym] += cnt;
          row.total += cnt;
          (void)sym;
        }
      }
    }
    return m;
  }

 private:
  struct Row {
    std::map<int, uint32_t> counts;
    uint64_t total = 0;
  };
  struct Table {
    std::map<std::string, Row> rows;
    void bump(const std::string& ctx, int sym) {
      Row& r = rows[ctx];
      r.counts[sym] += 1;
      r.total += 1;
    }
  };

  Table& level(int k) {
    if (tables_.size() < static_cast<size_t>(k)) tables_.resize(static_cast<size_t>(k));
    return tables_[static_cast<size_t>(k) - 1];
  }
  const Table& level(int k) const { return tables_[static_cast<size_t>(k) - 1]; }

  int normalize_symbol(int s) const {
    if (s == eos_id()) return s;
    if (s < 0 || s >= alphabet_size_) return unk_id();
    return s;
  }
  int normalize_context_symbol(int s) const {
    if (s == eos_id() || s == bos_id()) return s;
    if (s < 0 || s >= alphabet_size_) return unk_id();
    return s;
  }

  // Interpolated KN with fixed discount; falls through unseen contexts and
  // terminates in the uniform base distribution.
  double prob_interp(const std::string& ctx, int sym) const {
    int k = static_cast<int>(ctx.size()) + 1;
    if (k == 0) return uniform_base();
    double lower = ctx.empty() ? uniform_base() : prob_interp(ctx.substr(1), sym);
    if (static_cast<size_t>(k) > tables_.size()) return lower;
    const Table& t = level(k);
    auto it = t.rows.find(ctx);
    if (it == t.rows.end() || it->second.total == 0) return lower;
    const Row& row = it->second;
    auto jt = row.counts.find(sym);
    double c = jt == row.counts.end() ? 0.0 : static_cast<double>(jt->second);
    double denom = static_cast<double>(row.total);
    double types = static_cast<double>(row.counts.size());
    double lambda = discount_ * types / denom;
    return std::max(c - discount_, 0.0) / denom + lambda * lower;
  }

  double uniform_base() const { return 1.0 / static_cast<double>(prediction_vocab()); }

  static uint32_t push_state(uint32_t state, uint32_t sym) {
    uint32_t len = std::min<uint32_t>((state >> 24) + 1, 3);
    uint32_t ctx = ((state << 8) | (sym & 0xff)) & 0x00ffffff;
    return (len << 24) | ctx;
  }

  std::vector<int> unpack_state(uint32_t state) const {
    uint32_t len = state >> 24;
    std::vector<int> ctx;
    for (uint32_t i = 0; i < len; ++i) {
      uint32_t shift = 8 * (len - 1 - i);
      ctx.push_back(static_cast<int>((state >> shift) & 0xff));
    }
    return ctx;
  }

  int order_ = 4;
  int alphabet_size_ = 0;
  double discount_ = 0.75;
  bool mle_mode_ = false;
  std::vector<Table> tables_;
};

}  // namespace xmodal
