#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

namespace plume::nn::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha,
              a, lda, b, ldb, beta, c, ldc);
}

// Double precision only feeds gradient checks, so it uses a plain loop. Some
// OpenBLAS builds (0.3.20 with the AVX-512 dgemm kernel) return wrong products.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  // Pack op(B) row-major (k x n) so the inner loop is contiguous.
  std::vector<double> bp;
  const double* brow = b;
  int ldbp = ldb;
  if (trans_b) {
    bp.resize(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l) bp[static_cast<std::size_t>(l) * n + j] = b[static_cast<std::size_t>(j) * ldb + l];
    brow = bp.data();
    ldbp = n;
  }
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * ldc;
    if (beta == 0.0) {
      for (int j = 0; j < n; ++j) ci[j] = 0.0;
    } else if (beta != 1.0) {
      for (int j = 0; j < n; ++j) ci[j] *= beta;
    }
    for (int l = 0; l < k; ++l) {
      const double av =
          alpha * (trans_a ? a[static_cast<std::size_t>(l) * lda + i] : a[static_cast<std::size_t>(i) * lda + l]);
      if (av == 0.0) continue;
      const double* bl = brow + static_cast<std::size_t>(l) * ldbp;
      for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

}  // namespace plume::nn::detail
