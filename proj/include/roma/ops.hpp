#pragma once

#include <vector>

#include "roma/tensor.hpp"

namespace roma {

// Differentiable primitives. Each op computes its forward value and, when a
// TapeScope is active, records a backward rule on the current tape. Without
// an active tape the ops are plain forward math.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// x[m x n] + v broadcast over rows (v has n elements).
Tensor add_rowvec(const Tensor& x, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T  ->  [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor softmax_rows(const Tensor& x);
// Row i normalizes over columns j < i; row 0 is all zeros. Used by the
// strict-past causal cross-attention mask.
Tensor prefix_softmax_rows(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp_elem(const Tensor& x);
Tensor neg(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// mean((a - b)^2) over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Adds the row vector v (1 x d or d) to the listed rows of x.
Tensor add_to_rows(const Tensor& x, const std::vector<std::size_t>& rows, const Tensor& v);

// groups[g] lists row indices of x averaged into output row g.
Tensor group_mean_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& groups);

// Selective scan over K tokens. Per channel c and state i:
//   h[t] = exp(delta[t,c] * A[c,i]) * h[t-1] + delta[t,c] * B[t,i] * u[t,c]
//   y[t,c] = sum_i C[t,i] * h[t] + D[c] * u[t,c]
// u, delta: [K x ch]; B, C: [K x n]; A: [ch x n]; D: [ch].
Tensor ssm_scan(const Tensor& u, const Tensor& delta, const Tensor& B, const Tensor& C, const Tensor& A,
                const Tensor& D);

}  // namespace roma
