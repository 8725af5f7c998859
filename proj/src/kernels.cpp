#include "roma/kernels.hpp"

namespace roma::kern {

// Saxpy-ordered loops: the inner loop runs over contiguous output/operand
// rows, which GCC vectorizes with FMA. Good enough for the matrix sizes this
// project sees (inner dims <= ~1k); no blocking needed at that scale.

void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* __restrict a = A + i * k;
        double* __restrict c = C + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk];
            const double* __restrict b = B + kk * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void mm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* __restrict a = A + i * k;
        double* __restrict c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* __restrict b = B + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
            c[j] += acc;
        }
    }
}

void mm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double* __restrict a = A + r * k;
        const double* __restrict b = B + r * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = a[i];
            double* __restrict c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace roma::kern
