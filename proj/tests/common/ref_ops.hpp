#pragma once

// Double-precision reference implementations of every tape op, written
// independently of the tape code. Used as the forward function for
// finite-difference gradient checks.

#include <cmath>
#include <span>
#include <vector>

namespace xmodal::testing::ref {

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

inline Mat matmul(const Mat& a, const Mat& b, bool ta, bool tb) {
  int m = ta ? a.cols : a.rows, k = ta ? a.rows : a.cols;
  int n = tb ? b.rows : b.cols;
  Mat c(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        double av = ta ? a.at(p, i) : a.at(i, p);
        double bv = tb ? b.at(j, p) : b.at(p, j);
        acc += av * bv;
      }
      c.at(i, j) = acc;
    }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat c(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) c.at(j, i) = a.at(i, j);
  return c;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat c(a.rows, a.cols);
  bool broadcast = b.rows == 1 && a.rows != 1;
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j) + (broadcast ? b.at(0, j) : b.at(i, j));
  return c;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.rows, a.cols);
  bool broadcast = b.rows == 1 && a.rows != 1;
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j) * (broadcast ? b.at(0, j) : b.at(i, j));
  return c;
}

inline Mat scale(const Mat& a, double s) {
  Mat c = a;
  for (auto& x : c.v) x *= s;
  return c;
}

inline Mat softmax(const Mat& a) {
  Mat c(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) sum += std::exp(a.at(i, j) - mx);
    for (int j = 0; j < a.cols; ++j) c.at(i, j) = std::exp(a.at(i, j) - mx) / sum;
  }
  return c;
}

inline Mat log_softmax(const Mat& a) {
  Mat c(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mx = a.at(i, 0);
    for (int j = 1; j < a.cols; ++j) mx = std::max(mx, a.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < a.cols; ++j) sum += std::exp(a.at(i, j) - mx);
    double lse = mx + std::log(sum);
    for (int j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j) - lse;
  }
  return c;
}

inline Mat layernorm(const Mat& a, double eps = 1e-5) {
  Mat c(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < a.cols; ++j) mean += a.at(i, j);
    mean /= a.cols;
    for (int j = 0; j < a.cols; ++j) var += (a.at(i, j) - mean) * (a.at(i, j) - mean);
    var /= a.cols;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < a.cols; ++j) c.at(i, j) = (a.at(i, j) - mean) * inv;
  }
  return c;
}

inline Mat gelu(const Mat& a) {
  Mat c(a.rows, a.cols);
  const double k = std::sqrt(2.0 / 3.14159265358979323846);
  for (size_t i = 0; i < a.v.size(); ++i) {
    double x = a.v[i];
    c.v[i] = 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
  }
  return c;
}

inline Mat embedding(const Mat& table, std::span<const int> ids) {
  Mat c(static_cast<int>(ids.size()), table.cols);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int j = 0; j < table.cols; ++j) c.at(static_cast<int>(i), j) = table.at(ids[i], j);
  return c;
}

inline Mat concat_cols(const std::vector<Mat>& parts) {
  int cols = 0;
  for (const auto& p : parts) cols += p.cols;
  Mat c(parts[0].rows, cols);
  int c0 = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < p.rows; ++i)
      for (int j = 0; j < p.cols; ++j) c.at(i, c0 + j) = p.at(i, j);
    c0 += p.cols;
  }
  return c;
}

inline Mat slice_cols(const Mat& a, int c0, int c1) {
  Mat c(a.rows, c1 - c0);
  for (int i = 0; i < a.rows; ++i)
    for (int j = c0; j < c1; ++j) c.at(i, j - c0) = a.at(i, j);
  return c;
}

inline Mat select_rows(const Mat& a, std::span<const int> rows) {
  Mat c(static_cast<int>(rows.size()), a.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < a.cols; ++j) c.at(static_cast<int>(i), j) = a.at(rows[i], j);
  return c;
}

inline Mat scatter_rows(const Mat& a, const Mat& src, std::span<const int> rows) {
  Mat c = a;
  for (size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < a.cols; ++j) c.at(rows[i], j) = src.at(static_cast<int>(i), j);
  return c;
}

inline Mat mean_all(const Mat& a) {
  Mat c(1, 1);
  double sum = 0.0;
  for (double x : a.v) sum += x;
  c.v[0] = sum / static_cast<double>(a.v.size());
  return c;
}

inline Mat log(const Mat& a) {
  Mat c = a;
  for (auto& x : c.v) x = std::log(x);
  return c;
}

inline Mat exp(const Mat& a) {
  Mat c = a;
  for (auto& x : c.v) x = std::exp(x);
  return c;
}

inline Mat cross_entropy(const Mat& logits, std::span<const int> targets) {
  Mat ls = log_softmax(logits);
  Mat c(1, 1);
  double total = 0.0;
  for (int i = 0; i < logits.rows; ++i) total -= ls.at(i, targets[i]);
  c.v[0] = total / logits.rows;
  return c;
}

}  // namespace xmodal::testing::ref
