#pragma once

// Thin wrapper over OpenBLAS dgemm. Kept single-threaded: runs are the
// parallelism unit, and a fixed thread count keeps results reproducible.

#include <cstdint>

namespace tslab::detail {

// C[m,n] (+)= A[m,k] * B[k,n], row-major, optional transposes on A/B
// (dimensions are those of the *operands as used*, i.e. op(A) is m x k).
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n,
          std::int64_t k, double alpha, const double* a, std::int64_t lda,
          const double* b, std::int64_t ldb, double beta, double* c,
          std::int64_t ldc);

}  // namespace tslab::detail
