#pragma once

#include <cstddef>
#include <vector>

namespace xmodal {

namespace detail {
// C (m x n) += A (m x k, row-major) * B (k x n, row-major); axpy inner loop.
inline void gemm_nn_acc(int m, int n, int k, const float* a, const float* b, float* c) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      float av = arow[p];
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::vector<float>& gemm_scratch() {
  static thread_local std::vector<float> buf;
  return buf;
}
}  // namespace detail

// C (m x n) += op(A) * op(B), all matrices row-major and contiguous.
// A is m x k when !ta, else k x m; B is k x n when !tb, else n x k.
// accumulate=false overwrites C.
//
// Loop orders are chosen so the inner loop is a contiguous axpy or dot that
// GCC auto-vectorizes; at the model sizes used here (k, n <= 256) this runs
// within a small factor of vendor BLAS and keeps the build dependency-free.
inline void gemm(bool ta, bool tb, int m, int n, int k, const float* a, const float* b,
                 float* c, bool accumulate) {
  if (!accumulate) {
    for (int i = 0; i < m * n; ++i) c[i] = 0.0f;
  }
  if (!ta && !tb) {
    detail::gemm_nn_acc(m, n, k, a, b, c);
  } else if (!ta && tb) {
    // Materializing B^T and reusing the axpy kernel beats a strict-FP dot
    // product loop by ~5x at these sizes; the copy is O(k*n) vs O(m*n*k) work.
    auto& bt = detail::gemm_scratch();
    bt.resize(static_cast<size_t>(k) * n);
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p) bt[static_cast<size_t>(p) * n + j] = b[static_cast<size_t>(j) * k + p];
    detail::gemm_nn_acc(m, n, k, a, bt.data(), c);
  } else if (ta && !tb) {
    for (int p = 0; p < k; ++p) {
      const float* arow = a + static_cast<size_t>(p) * m;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        float av = arow[i];
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      float* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const float* brow = b + static_cast<size_t>(j) * k;
        float acc = 0.0f;
        for (int p = 0; p < k; ++p) acc += a[static_cast<size_t>(p) * m + i] * brow[p];
        crow[j] += acc;
      }
    }
  }
}

}  // namespace xmodal
