#include "spe/kernels.hpp"

#include <cstring>
#include <vector>

namespace spe {

namespace {

constexpr int64_t kBlock = 64;  // doubles of C held in registers per strip

// Parallel regions cost more than they save on small products.
inline bool worth_threads(int64_t m, int64_t k, int64_t n) { return m > 1 && m * k * n >= 262144; }

// Core kernel: C[m x n] += A[m x k] * B[k x n], all row-major. Every output
// element accumulates in ascending p with a fixed lane layout, so results
// depend only on the shapes, never on threading.
void mm_nn_core(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static) if (worth_threads(m, k, n))
  for (int64_t i = 0; i < m; ++i) {
    const double* __restrict a = A + i * k;
    double* __restrict c = C + i * n;
    int64_t j = 0;
    for (; j + kBlock <= n; j += kBlock) {
      double acc[kBlock];
      std::memcpy(acc, c + j, sizeof(acc));
      for (int64_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* __restrict b = B + p * n + j;
#pragma omp simd
        for (int64_t q = 0; q < kBlock; ++q) acc[q] += av * b[q];
      }
      std::memcpy(c + j, acc, sizeof(acc));
    }
    if (j < n) {
      const int64_t rem = n - j;
      double acc[kBlock];
      std::memcpy(acc, c + j, static_cast<size_t>(rem) * sizeof(double));
      for (int64_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* __restrict b = B + p * n + j;
#pragma omp simd
        for (int64_t q = 0; q < rem; ++q) acc[q] += av * b[q];
      }
      std::memcpy(c + j, acc, static_cast<size_t>(rem) * sizeof(double));
    }
  }
}

// X[r x c] -> out[c x r]
void transpose_into(const double* X, double* out, int64_t r, int64_t c) {
  for (int64_t i = 0; i < r; ++i) {
    const double* src = X + i * c;
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = src[j];
  }
}

}  // namespace

void mm_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  mm_nn_core(A, B, C, m, k, n);
}

void mm_nt(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  // B arrives as [n x k]; transposing it once is far cheaper than the
  // strided dot products it would otherwise force.
  std::vector<double> bt(static_cast<size_t>(k) * static_cast<size_t>(n));
  transpose_into(B, bt.data(), n, k);
  mm_nn_core(A, bt.data(), C, m, k, n);
}

void mm_tn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  std::vector<double> at(static_cast<size_t>(m) * static_cast<size_t>(k));
  transpose_into(A, at.data(), k, m);
  mm_nn_core(at.data(), B, C, m, k, n);
}

}  // namespace spe
