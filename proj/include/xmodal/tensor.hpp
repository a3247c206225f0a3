#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/gemm.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

// ---------------------------------------------------------------------------
// Tensor: persistent dense f32 array (parameters, corpus frames, ...).
// Tape tensors are rank-2 throughout; rank-1 shapes are treated as {1, n}
// when they enter a tape.

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::optional<std::vector<float>> grad;

  Tensor() = default;
  Tensor(std::vector<int> shape_, bool requires_grad_ = false)
      : shape(std::move(shape_)), requires_grad(requires_grad_) {
    data.assign(numel_of(shape), 0.0f);
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      require(d > 0, "tensor dimensions must be positive");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t numel() const { return data.size(); }
  int rows() const { return shape.size() == 2 ? shape[0] : 1; }
  int cols() const { return shape.empty() ? 1 : shape.back(); }

  float& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  std::vector<float>& ensure_grad() {
    if (!grad) grad.emplace(data.size(), 0.0f);
    return *grad;
  }
  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0f);
  }
};

using TensorId = int32_t;

enum class OpKind : uint8_t {
  kLeaf,
  kConstant,
  kMatmul,
  kTranspose,
  kAdd,
  kMul,
  kScale,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kGelu,
  kEmbedding,
  kConcatCols,
  kSliceCols,
  kSelectRows,
  kScatterRows,
  kMeanAll,
  kLog,
  kExp,
  kCrossEntropy,
  kCustomScalar,  // scalar-valued op with a jacobian saved at forward time (CTC)
};

inline const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layernorm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConcatCols: return "concat";
    case OpKind::kSliceCols: return "slice";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kScatterRows: return "scatter_rows";
    case OpKind::kMeanAll: return "mean";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kCustomScalar: return "custom_scalar";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Tape: define-by-run computation graph. Values and gradients live in flat
// arenas that are reused across reset() calls, so a training loop does not
// churn the allocator. Single-threaded per tape; use one tape per thread.

class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  void reset() {
    nodes_.clear();
    vals_.clear();
    aux_.clear();
    grads_.clear();
    leaf_ids_.clear();
    leaf_order_.clear();
    consumed_ = false;
  }

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  int rows(TensorId id) const { return node(id).rows; }
  int cols(TensorId id) const { return node(id).cols; }

  std::span<const float> value(TensorId id) const {
    const Node& n = node(id);
    return {vals_.data() + n.voff, n.len};
  }

  std::span<const float> grad(TensorId id) const {
    const Node& n = node(id);
    require(!grads_.empty(), "backward has not run");
    return {grads_.data() + n.voff, n.len};
  }

  // ---- graph inputs ----

  TensorId leaf(Tensor& t) {
    auto it = leaf_ids_.find(&t);
    if (it != leaf_ids_.end()) return it->second;
    auto [r, c] = as_2d(t.shape);
    TensorId id = push(OpKind::kLeaf, r, c, {});
    Node& n = node_mut(id);
    n.leaf = &t;
    n.requires_grad = t.requires_grad;
    std::copy(t.data.begin(), t.data.end(), vals_.begin() + static_cast<ptrdiff_t>(n.voff));
    check_output(id);
    leaf_ids_.emplace(&t, id);
    leaf_order_.push_back(id);
    return id;
  }

  TensorId constant(int rows, int cols, std::span<const float> data) {
    require(static_cast<size_t>(rows) * cols == data.size(), "constant: data length mismatch");
    TensorId id = push(OpKind::kConstant, rows, cols, {});
    std::copy(data.begin(), data.end(), vals_.begin() + static_cast<ptrdiff_t>(node(id).voff));
    check_output(id);
    return id;
  }

  // ---- ops ----

  TensorId matmul(TensorId a, TensorId b, bool ta = false, bool tb = false) {
    const Node& na = node(a);
    const Node& nb = node(b);
    int am = ta ? na.cols : na.rows, ak = ta ? na.rows : na.cols;
    int bk = tb ? nb.cols : nb.rows, bn = tb ? nb.rows : nb.cols;
    require(ak == bk, shape_msg("matmul", a, b));
    TensorId id = push(OpKind::kMatmul, am, bn, {a, b});
    Node& n = node_mut(id);
    n.trans_a = ta;
    n.trans_b = tb;
    gemm(ta, tb, am, bn, ak, vptr(a), vptr(b), out(id), false);
    check_output(id);
    return id;
  }

  TensorId transpose(TensorId a) {
    int r = node(a).rows, c = node(a).cols;
    TensorId id = push(OpKind::kTranspose, c, r, {a});
    const float* x = vptr(a);
    float* y = out(id);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) y[static_cast<size_t>(j) * r + i] = x[static_cast<size_t>(i) * c + j];
    check_output(id);
    return id;
  }

  // b must either match a's shape or be a {1, cols} row that is broadcast
  // over a's rows (the only broadcast supported).
  TensorId add(TensorId a, TensorId b) { return binary_elementwise(OpKind::kAdd, a, b); }
  TensorId mul(TensorId a, TensorId b) { return binary_elementwise(OpKind::kMul, a, b); }

  TensorId scale(TensorId a, float s) {
    const Node& na = node(a);
    TensorId id = push(OpKind::kScale, na.rows, na.cols, {a});
    node_mut(id).scalar = s;
    const float* x = vptr(a);
    float* y = out(id);
    for (size_t i = 0; i < node(id).len; ++i) y[i] = x[i] * s;
    check_output(id);
    return id;
  }

  TensorId softmax(TensorId a) {
    TensorId id = rowwise_push(OpKind::kSoftmax, a);
    const Node& n = node(id);
    const float* x = vptr(a);
    float* y = out(id);
    for (int i = 0; i < n.rows; ++i) {
      const float* xr = x + static_cast<size_t>(i) * n.cols;
      float* yr = y + static_cast<size_t>(i) * n.cols;
      float mx = xr[0];
      for (int j = 1; j < n.cols; ++j) mx = std::max(mx, xr[j]);
      double sum = 0.0;
      for (int j = 0; j < n.cols; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
      float inv = static_cast<float>(1.0 / sum);
      for (int j = 0; j < n.cols; ++j) yr[j] *= inv;
    }
    check_output(id);
    return id;
  }

  TensorId log_softmax(TensorId a) {
    TensorId id = rowwise_push(OpKind::kLogSoftmax, a);
    const Node& n = node(id);
    const float* x = vptr(a);
    float* y = out(id);
    for (int i = 0; i < n.rows; ++i) {
      const float* xr = x + static_cast<size_t>(i) * n.cols;
      float* yr = y + static_cast<size_t>(i) * n.cols;
      float mx = xr[0];
      for (int j = 1; j < n.cols; ++j) mx = std::max(mx, xr[j]);
      double sum = 0.0;
      for (int j = 0; j < n.cols; ++j) sum += std::exp(static_cast<double>(xr[j]) - mx);
      float lse = mx + static_cast<float>(std::log(sum));
      for (int j = 0; j < n.cols; ++j) yr[j] = xr[j] - lse;
    }
    check_output(id);
    return id;
  }

  // Row-wise standardization (mean 0, variance 1); affine scale/shift are
  // separate mul/add ops.
  TensorId layernorm(TensorId a, float eps = 1e-5f) {
    TensorId id = rowwise_push(OpKind::kLayerNorm, a);
    Node& n = node_mut(id);
    n.aux_off = aux_.size();
    n.aux_len = static_cast<size_t>(n.rows);
    aux_.resize(n.aux_off + n.aux_len);
    const float* x = vptr(a);
    float* y = out(id);
    for (int i = 0; i < n.rows; ++i) {
      const float* xr = x + static_cast<size_t>(i) * n.cols;
      float* yr = y + static_cast<size_t>(i) * n.cols;
      double mean = 0.0;
      for (int j = 0; j < n.cols; ++j) mean += xr[j];
      mean /= n.cols;
      double var = 0.0;
      for (int j = 0; j < n.cols; ++j) {
        double d = xr[j] - mean;
        var += d * d;
      }
      var /= n.cols;
      float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
      aux_[n.aux_off + i] = inv_std;
      for (int j = 0; j < n.cols; ++j) yr[j] = (xr[j] - static_cast<float>(mean)) * inv_std;
    }
    check_output(id);
    return id;
  }

  TensorId gelu(TensorId a) {
    const Node& na = node(a);
    TensorId id = push(OpKind::kGelu, na.rows, na.cols, {a});
    const float* x = vptr(a);
    float* y = out(id);
    for (size_t i = 0; i < node(id).len; ++i) y[i] = gelu_fwd(x[i]);
    check_output(id);
    return id;
  }

  TensorId embedding(TensorId table, std::span<const int> ids) {
    const Node& nt = node(table);
    require(!ids.empty(), "embedding: empty index list");
    for (int v : ids) require(v >= 0 && v < nt.rows, "embedding: id out of range");
    int tc = nt.cols;
    TensorId id = push(OpKind::kEmbedding, static_cast<int>(ids.size()), tc, {table});
    Node& n = node_mut(id);
    n.idx.assign(ids.begin(), ids.end());
    const float* t = vptr(table);
    float* y = out(id);
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(t + static_cast<size_t>(ids[i]) * tc, tc, y + i * tc);
    check_output(id);
    return id;
  }

  TensorId concat_cols(std::span<const TensorId> parts) {
    require(!parts.empty(), "concat: no inputs");
    int r = node(parts[0]).rows, c = 0;
    for (TensorId p : parts) {
      require(node(p).rows == r, "concat: row mismatch");
      c += node(p).cols;
    }
    TensorId id = push(OpKind::kConcatCols, r, c, {parts.begin(), parts.end()});
    float* y = out(id);
    int c0 = 0;
    for (TensorId p : parts) {
      const Node& np = node(p);
      const float* x = vptr(p);
      for (int i = 0; i < r; ++i)
        std::copy_n(x + static_cast<size_t>(i) * np.cols, np.cols, y + static_cast<size_t>(i) * c + c0);
      c0 += np.cols;
    }
    check_output(id);
    return id;
  }

  TensorId slice_cols(TensorId a, int c0, int c1) {
    const Node& na = node(a);
    require(0 <= c0 && c0 < c1 && c1 <= na.cols, "slice: bad column range");
    int ar = na.rows, ac = na.cols;
    TensorId id = push(OpKind::kSliceCols, ar, c1 - c0, {a});
    Node& n = node_mut(id);
    n.idx = {c0, c1};
    const float* x = vptr(a);
    float* y = out(id);
    for (int i = 0; i < ar; ++i)
      std::copy_n(x + static_cast<size_t>(i) * ac + c0, c1 - c0, y + static_cast<size_t>(i) * (c1 - c0));
    check_output(id);
    return id;
  }

  TensorId select_rows(TensorId a, std::span<const int> rows) {
    const Node& na = node(a);
    require(!rows.empty(), "select_rows: empty index list");
    for (int r : rows) require(r >= 0 && r < na.rows, "select_rows: row out of range");
    int ac = na.cols;
    TensorId id = push(OpKind::kSelectRows, static_cast<int>(rows.size()), ac, {a});
    Node& n = node_mut(id);
    n.idx.assign(rows.begin(), rows.end());
    const float* x = vptr(a);
    float* y = out(id);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy_n(x + static_cast<size_t>(rows[i]) * ac, ac, y + i * ac);
    check_output(id);
    return id;
  }

  // out = a with out[rows[i], :] = src[i, :]; row indices must be unique.
  TensorId scatter_rows(TensorId a, TensorId src, std::span<const int> rows) {
    const Node& na = node(a);
    const Node& ns = node(src);
    require(ns.cols == na.cols, "scatter_rows: column mismatch");
    require(static_cast<size_t>(ns.rows) == rows.size(), "scatter_rows: index count mismatch");
    for (int r : rows) require(r >= 0 && r < na.rows, "scatter_rows: row out of range");
    int ac = na.cols;
    TensorId id = push(OpKind::kScatterRows, na.rows, ac, {a, src});
    Node& n = node_mut(id);
    n.idx.assign(rows.begin(), rows.end());
    const float* x = vptr(a);
    const float* s = vptr(src);
    float* y = out(id);
    std::copy_n(x, n.len, y);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy_n(s + i * ac, ac, y + static_cast<size_t>(rows[i]) * ac);
    check_output(id);
    return id;
  }

  TensorId mean_all(TensorId a) {
    size_t alen = node(a).len;
    TensorId id = push(OpKind::kMeanAll, 1, 1, {a});
    const float* x = vptr(a);
    double sum = 0.0;
    for (size_t i = 0; i < alen; ++i) sum += x[i];
    out(id)[0] = static_cast<float>(sum / static_cast<double>(alen));
    check_output(id);
    return id;
  }

  TensorId log(TensorId a) { return unary_math(OpKind::kLog, a); }
  TensorId exp(TensorId a) { return unary_math(OpKind::kExp, a); }

  // Mean over rows of -log softmax(logits)[target]; the fused form is
  // numerically stable and avoids materializing one-hot targets.
  TensorId cross_entropy(TensorId logits, std::span<const int> targets) {
    const Node& nl = node(logits);
    require(static_cast<size_t>(nl.rows) == targets.size(), "cross_entropy: target count mismatch");
    for (int t : targets) require(t >= 0 && t < nl.cols, "cross_entropy: target out of range");
    int lr = nl.rows, lc = nl.cols;
    size_t llen = nl.len;
    TensorId id = push(OpKind::kCrossEntropy, 1, 1, {logits});
    Node& n = node_mut(id);
    n.idx.assign(targets.begin(), targets.end());
    n.aux_off = aux_.size();
    n.aux_len = llen;
    aux_.resize(n.aux_off + n.aux_len);
    const float* x = vptr(logits);
    double total = 0.0;
    for (int i = 0; i < lr; ++i) {
      const float* xr = x + static_cast<size_t>(i) * lc;
      float* pr = aux_.data() + n.aux_off + static_cast<size_t>(i) * lc;
      float mx = xr[0];
      for (int j = 1; j < lc; ++j) mx = std::max(mx, xr[j]);
      double sum = 0.0;
      for (int j = 0; j < lc; ++j) {
        pr[j] = std::exp(xr[j] - mx);
        sum += pr[j];
      }
      float inv = static_cast<float>(1.0 / sum);
      for (int j = 0; j < lc; ++j) pr[j] *= inv;
      total += -(static_cast<double>(xr[targets[i]]) - mx - std::log(sum));
    }
    out(id)[0] = static_cast<float>(total / lr);
    check_output(id);
    return id;
  }

  // Scalar-valued custom op; d(value)/d(input) is supplied by the caller at
  // forward time (used by the CTC module).
  TensorId custom_scalar(TensorId input, float value, std::span<const float> dvalue_dinput,
                         const char* what = "custom_scalar") {
    const Node& ni = node(input);
    require(ni.len == dvalue_dinput.size(), std::string(what) + ": jacobian length mismatch");
    TensorId id = push(OpKind::kCustomScalar, 1, 1, {input});
    Node& n = node_mut(id);
    n.aux_off = aux_.size();
    n.aux_len = dvalue_dinput.size();
    aux_.insert(aux_.end(), dvalue_dinput.begin(), dvalue_dinput.end());
    out(id)[0] = value;
    check_output(id);
    return id;
  }

  // ---- backward ----

  struct LeafGrad {
    Tensor* tensor;
    std::span<const float> grad;
  };

  void backward(TensorId loss) {
    require(!consumed_, "tape already consumed by backward");
    const Node& nl = node(loss);
    require(nl.rows == 1 && nl.cols == 1, "backward: loss must be scalar");
    consumed_ = true;
    grads_.assign(vals_.size(), 0.0f);
    grads_[node(loss).voff] = 1.0f;
    for (TensorId id = static_cast<TensorId>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad) continue;
      if (n.kind == OpKind::kLeaf || n.kind == OpKind::kConstant) continue;
      if (id > loss) continue;  // nodes recorded after the loss do not affect it
      backward_node(id);
    }
  }

  // Gradients for every requires_grad leaf, in first-registration order.
  // Leaves not connected to the loss get zeros.
  std::vector<LeafGrad> leaf_grads() {
    require(!grads_.empty(), "backward has not run");
    std::vector<LeafGrad> outv;
    for (TensorId id : leaf_order_) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.leaf->requires_grad) continue;
      outv.push_back({n.leaf, {grads_.data() + n.voff, n.len}});
    }
    return outv;
  }

 private:
  struct Node {
    OpKind kind;
    int rows, cols;
    size_t voff, len;
    size_t aux_off = 0, aux_len = 0;
    bool requires_grad = false;
    bool trans_a = false, trans_b = false;
    float scalar = 0.0f;
    Tensor* leaf = nullptr;
    std::vector<TensorId> inputs;
    std::vector<int> idx;
  };

  const Node& node(TensorId id) const {
    require(id >= 0 && static_cast<size_t>(id) < nodes_.size(), "bad tensor id");
    return nodes_[static_cast<size_t>(id)];
  }
  Node& node_mut(TensorId id) { return nodes_[static_cast<size_t>(id)]; }

  const float* vptr(TensorId id) const { return vals_.data() + node(id).voff; }
  float* out(TensorId id) { return vals_.data() + node(id).voff; }
  float* gptr(TensorId id) { return grads_.data() + node(id).voff; }

  static std::pair<int, int> as_2d(const std::vector<int>& shape) {
    require(!shape.empty() && shape.size() <= 2, "tape tensors are rank 1 or 2");
    if (shape.size() == 1) return {1, shape[0]};
    return {shape[0], shape[1]};
  }

  TensorId push(OpKind kind, int rows, int cols, std::vector<TensorId> inputs) {
    require(!consumed_, "tape already consumed by backward; reset() first");
    require(rows > 0 && cols > 0, "op produced empty shape");
    Node n;
    n.kind = kind;
    n.rows = rows;
    n.cols = cols;
    n.len = static_cast<size_t>(rows) * cols;
    n.voff = vals_.size();
    bool rq = false;
    for (TensorId i : inputs) rq = rq || node(i).requires_grad;
    n.requires_grad = rq;
    n.inputs = std::move(inputs);
    vals_.resize(n.voff + n.len);
    nodes_.push_back(std::move(n));
    return static_cast<TensorId>(nodes_.size() - 1);
  }

  TensorId rowwise_push(OpKind kind, TensorId a) {
    const Node& na = node(a);
    return push(kind, na.rows, na.cols, {a});
  }

  TensorId unary_math(OpKind kind, TensorId a) {
    const Node& na = node(a);
    TensorId id = push(kind, na.rows, na.cols, {a});
    const float* x = vptr(a);
    float* y = out(id);
    for (size_t i = 0; i < node(id).len; ++i) y[i] = kind == OpKind::kLog ? std::log(x[i]) : std::exp(x[i]);
    check_output(id);
    return id;
  }

  TensorId binary_elementwise(OpKind kind, TensorId a, TensorId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    bool broadcast = nb.rows == 1 && na.cols == nb.cols && na.rows != 1;
    require(broadcast || (na.rows == nb.rows && na.cols == nb.cols),
            shape_msg(kind == OpKind::kAdd ? "add" : "mul", a, b));
    int ar = na.rows, ac = na.cols;
    TensorId id = push(kind, ar, ac, {a, b});
    const float* x = vptr(a);
    const float* yv = vptr(b);
    float* o = out(id);
    for (int i = 0; i < ar; ++i) {
      const float* xr = x + static_cast<size_t>(i) * ac;
      const float* yr = broadcast ? yv : yv + static_cast<size_t>(i) * ac;
      float* orow = o + static_cast<size_t>(i) * ac;
      if (kind == OpKind::kAdd)
        for (int j = 0; j < ac; ++j) orow[j] = xr[j] + yr[j];
      else
        for (int j = 0; j < ac; ++j) orow[j] = xr[j] * yr[j];
    }
    check_output(id);
    return id;
  }

  std::string shape_msg(const char* op, TensorId a, TensorId b) const {
    const Node& na = node(a);
    const Node& nb = node(b);
    return std::string(op) + ": shape mismatch (" + std::to_string(na.rows) + "x" + std::to_string(na.cols) +
           " vs " + std::to_string(nb.rows) + "x" + std::to_string(nb.cols) + ")";
  }

  void check_output(TensorId id) {
    if (!check_finite_) return;
    const Node& n = node(id);
    const float* x = vptr(id);
    for (size_t i = 0; i < n.len; ++i) {
      if (!std::isfinite(x[i]))
        fail(std::string("non-finite value produced by ") + op_kind_name(n.kind));
    }
  }

  static float gelu_fwd(float x) {
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    float u = kC * (x + 0.044715f * x * x * x);
    return 0.5f * x * (1.0f + std::tanh(u));
  }

  static float gelu_bwd(float x) {
    constexpr float kC = 0.7978845608028654f;
    float u = kC * (x + 0.044715f * x * x * x);
    float t = std::tanh(u);
    float du = kC * (1.0f + 3.0f * 0.044715f * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
  }

  void backward_node(TensorId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const float* g = gptr(id);
    switch (n.kind) {
      case OpKind::kMatmul: {
        TensorId a = n.inputs[0], b = n.inputs[1];
        const Node& na = node(a);
        int m = n.rows, nn = n.cols;
        int k = n.trans_a ? na.rows : na.cols;
        if (node(a).requires_grad) {
          if (!n.trans_a && !n.trans_b) gemm(false, true, m, k, nn, g, vptr(b), gptr(a), true);
          else if (!n.trans_a && n.trans_b) gemm(false, false, m, k, nn, g, vptr(b), gptr(a), true);
          else if (n.trans_a && !n.trans_b) gemm(false, true, k, m, nn, vptr(b), g, gptr(a), true);
          else gemm(true, true, k, m, nn, vptr(b), g, gptr(a), true);
        }
        if (node(b).requires_grad) {
          if (!n.trans_a && !n.trans_b) gemm(true, false, k, nn, m, vptr(a), g, gptr(b), true);
          else if (!n.trans_a && n.trans_b) gemm(true, false, nn, k, m, g, vptr(a), gptr(b), true);
          else if (n.trans_a && !n.trans_b) gemm(false, false, k, nn, m, vptr(a), g, gptr(b), true);
          else gemm(true, true, nn, k, m, g, vptr(a), gptr(b), true);
        }
        break;
      }
      case OpKind::kTranspose: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        float* ga = gptr(a);
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j) ga[static_cast<size_t>(j) * n.rows + i] += g[static_cast<size_t>(i) * n.cols + j];
        break;
      }
      case OpKind::kAdd:
      case OpKind::kMul: {
        TensorId a = n.inputs[0], b = n.inputs[1];
        const Node& nb = node(b);
        bool broadcast = nb.rows == 1 && n.rows != 1;
        const float* xa = vptr(a);
        const float* xb = vptr(b);
        if (node(a).requires_grad) {
          float* ga = gptr(a);
          if (n.kind == OpKind::kAdd) {
            for (size_t i = 0; i < n.len; ++i) ga[i] += g[i];
          } else {
            for (int i = 0; i < n.rows; ++i) {
              const float* br = broadcast ? xb : xb + static_cast<size_t>(i) * n.cols;
              for (int j = 0; j < n.cols; ++j)
                ga[static_cast<size_t>(i) * n.cols + j] += g[static_cast<size_t>(i) * n.cols + j] * br[j];
            }
          }
        }
        if (node(b).requires_grad) {
          float* gb = gptr(b);
          if (n.kind == OpKind::kAdd) {
            if (broadcast) {
              for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j) gb[j] += g[static_cast<size_t>(i) * n.cols + j];
            } else {
              for (size_t i = 0; i < n.len; ++i) gb[i] += g[i];
            }
          } else {
            if (broadcast) {
              for (int i = 0; i < n.rows; ++i)
                for (int j = 0; j < n.cols; ++j)
                  gb[j] += g[static_cast<size_t>(i) * n.cols + j] * xa[static_cast<size_t>(i) * n.cols + j];
            } else {
              for (size_t i = 0; i < n.len; ++i) gb[i] += g[i] * xa[i];
            }
          }
        }
        break;
      }
      case OpKind::kScale: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        float* ga = gptr(a);
        for (size_t i = 0; i < n.len; ++i) ga[i] += g[i] * n.scalar;
        break;
      }
      case OpKind::kSoftmax: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* y = vptr(id);
        float* ga = gptr(a);
        for (int i = 0; i < n.rows; ++i) {
          const float* yr = y + static_cast<size_t>(i) * n.cols;
          const float* gr = g + static_cast<size_t>(i) * n.cols;
          double dot = 0.0;
          for (int j = 0; j < n.cols; ++j) dot += static_cast<double>(gr[j]) * yr[j];
          float* gar = ga + static_cast<size_t>(i) * n.cols;
          for (int j = 0; j < n.cols; ++j) gar[j] += yr[j] * (gr[j] - static_cast<float>(dot));
        }
        break;
      }
      case OpKind::kLogSoftmax: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* y = vptr(id);
        float* ga = gptr(a);
        for (int i = 0; i < n.rows; ++i) {
          const float* yr = y + static_cast<size_t>(i) * n.cols;
          const float* gr = g + static_cast<size_t>(i) * n.cols;
          double gsum = 0.0;
          for (int j = 0; j < n.cols; ++j) gsum += gr[j];
          float* gar = ga + static_cast<size_t>(i) * n.cols;
          for (int j = 0; j < n.cols; ++j) gar[j] += gr[j] - std::exp(yr[j]) * static_cast<float>(gsum);
        }
        break;
      }
      case OpKind::kLayerNorm: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* y = vptr(id);
        float* ga = gptr(a);
        for (int i = 0; i < n.rows; ++i) {
          const float* yr = y + static_cast<size_t>(i) * n.cols;
          const float* gr = g + static_cast<size_t>(i) * n.cols;
          float inv_std = aux_[n.aux_off + i];
          double gmean = 0.0, gymean = 0.0;
          for (int j = 0; j < n.cols; ++j) {
            gmean += gr[j];
            gymean += static_cast<double>(gr[j]) * yr[j];
          }
          gmean /= n.cols;
          gymean /= n.cols;
          float* gar = ga + static_cast<size_t>(i) * n.cols;
          for (int j = 0; j < n.cols; ++j)
            gar[j] += inv_std * (gr[j] - static_cast<float>(gmean) - yr[j] * static_cast<float>(gymean));
        }
        break;
      }
      case OpKind::kGelu: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* x = vptr(a);
        float* ga = gptr(a);
        for (size_t i = 0; i < n.len; ++i) ga[i] += g[i] * gelu_bwd(x[i]);
        break;
      }
      case OpKind::kEmbedding: {
        TensorId t = n.inputs[0];
        if (!node(t).requires_grad) break;
        float* gt = gptr(t);
        for (size_t i = 0; i < n.idx.size(); ++i) {
          const float* gr = g + i * n.cols;
          float* row = gt + static_cast<size_t>(n.idx[i]) * n.cols;
          for (int j = 0; j < n.cols; ++j) row[j] += gr[j];
        }
        break;
      }
      case OpKind::kConcatCols: {
        int c0 = 0;
        for (TensorId p : n.inputs) {
          const Node& np = node(p);
          if (node(p).requires_grad) {
            float* gp = gptr(p);
            for (int i = 0; i < n.rows; ++i)
              for (int j = 0; j < np.cols; ++j)
                gp[static_cast<size_t>(i) * np.cols + j] += g[static_cast<size_t>(i) * n.cols + c0 + j];
          }
          c0 += np.cols;
        }
        break;
      }
      case OpKind::kSliceCols: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const Node& na = node(a);
        int c0 = n.idx[0];
        float* ga = gptr(a);
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            ga[static_cast<size_t>(i) * na.cols + c0 + j] += g[static_cast<size_t>(i) * n.cols + j];
        break;
      }
      case OpKind::kSelectRows: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        float* ga = gptr(a);
        for (size_t i = 0; i < n.idx.size(); ++i) {
          const float* gr = g + i * n.cols;
          float* row = ga + static_cast<size_t>(n.idx[i]) * n.cols;
          for (int j = 0; j < n.cols; ++j) row[j] += gr[j];
        }
        break;
      }
      case OpKind::kScatterRows: {
        TensorId a = n.inputs[0], s = n.inputs[1];
        if (node(s).requires_grad) {
          float* gs = gptr(s);
          for (size_t i = 0; i < n.idx.size(); ++i) {
            const float* gr = g + static_cast<size_t>(n.idx[i]) * n.cols;
            for (int j = 0; j < n.cols; ++j) gs[i * n.cols + j] += gr[j];
          }
        }
        if (node(a).requires_grad) {
          float* ga = gptr(a);
          std::vector<char> replaced(static_cast<size_t>(n.rows), 0);
          for (int r : n.idx) replaced[static_cast<size_t>(r)] = 1;
          for (int i = 0; i < n.rows; ++i) {
            if (replaced[static_cast<size_t>(i)]) continue;
            const float* gr = g + static_cast<size_t>(i) * n.cols;
            float* row = ga + static_cast<size_t>(i) * n.cols;
            for (int j = 0; j < n.cols; ++j) row[j] += gr[j];
          }
        }
        break;
      }
      case OpKind::kMeanAll: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const Node& na = node(a);
        float gv = g[0] / static_cast<float>(na.len);
        float* ga = gptr(a);
        for (size_t i = 0; i < na.len; ++i) ga[i] += gv;
        break;
      }
      case OpKind::kLog: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* x = vptr(a);
        float* ga = gptr(a);
        for (size_t i = 0; i < n.len; ++i) ga[i] += g[i] / x[i];
        break;
      }
      case OpKind::kExp: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* y = vptr(id);
        float* ga = gptr(a);
        for (size_t i = 0; i < n.len; ++i) ga[i] += g[i] * y[i];
        break;
      }
      case OpKind::kCrossEntropy: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const Node& na = node(a);
        const float* p = aux_.data() + n.aux_off;
        float gv = g[0] / static_cast<float>(na.rows);
        float* ga = gptr(a);
        for (int i = 0; i < na.rows; ++i) {
          const float* pr = p + static_cast<size_t>(i) * na.cols;
          float* gr = ga + static_cast<size_t>(i) * na.cols;
          for (int j = 0; j < na.cols; ++j) gr[j] += gv * pr[j];
          gr[n.idx[static_cast<size_t>(i)]] -= gv;
        }
        break;
      }
      case OpKind::kCustomScalar: {
        TensorId a = n.inputs[0];
        if (!node(a).requires_grad) break;
        const float* j = aux_.data() + n.aux_off;
        float gv = g[0];
        float* ga = gptr(a);
        for (size_t i = 0; i < n.aux_len; ++i) ga[i] += gv * j[i];
        break;
      }
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
    }
  }

  bool check_finite_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::vector<float> vals_;
  std::vector<float> aux_;
  std::vector<float> grads_;
  std::unordered_map<const Tensor*, TensorId> leaf_ids_;
  std::vector<TensorId> leaf_order_;
};

}  // namespace xmodal
