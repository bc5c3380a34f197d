#pragma once

#include <cstdint>

namespace spe {

// Dense double-precision matrix kernels, row-major.
//
// Every output element is accumulated by a single thread in an order that
// depends only on the operand shapes, never on the thread count or schedule.
// That makes training runs bit-reproducible regardless of SPE_THREADS.

// C[m x n] += A[m x k] * B[k x n]
void mm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n);

// C[m x n] += A[m x k] * B[n x k]^T
void mm_nt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n);

// C[m x n] += A[k x m]^T * B[k x n]
void mm_tn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n);

}  // namespace spe
