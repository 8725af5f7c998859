#pragma once

#include <cstddef>

namespace roma::kern {

// Raw row-major GEMM kernels. All accumulate (C += ...) so the same routines
// serve forward passes (on zeroed outputs) and gradient accumulation.

// C[m x n] += A[m x k] * B[k x n]
void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n);

// C[m x n] += A[m x k] * B[n x k]^T
void mm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n);

// C[k x n] += A[m x k]^T * B[m x n]
void mm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n);

}  // namespace roma::kern
