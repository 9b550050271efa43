#pragma once

// Row-major dense products used by the spectral network.
// All routines accumulate: C += alpha * op(A) * op(B).

#include <cstddef>

namespace proflow::dense {

/// C (m x n) += alpha * A (m x k) * B (k x n)
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = alpha * ai[p];
      if (s == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

/// C (m x n) += alpha * A (m x k) * B^T, B stored (n x k)
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += alpha * s;
    }
  }
}

/// C (m x n) += alpha * A^T * B, A stored (k x m), B (k x n)
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = alpha * ap[i];
      if (s == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

}  // namespace proflow::dense
