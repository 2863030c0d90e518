#pragma once

// Brute-force reference implementations used only by tests and the verify
// suite. Each one is an independent computational route (plain scalar loops,
// no Tensor ops) against which the production path is compared.

#include <cstddef>
#include <vector>

#include "owcl/nn.hpp"

namespace owcl {

// Materializes [P_k; x] / [P_v; x] explicitly and evaluates multi-head
// attention with naive loops. LoRA deltas, when attached, are folded densely
// into the projection weights first.
std::vector<double> naive_attention_with_prefix(const MultiHeadAttention& mha,
                                                const std::vector<double>& x, std::size_t T,
                                                const LayerPrefix* prefix);

// Cyclic Jacobi eigensolver for a symmetric matrix (row-major n*n).
// Returns eigenvalues sorted descending.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n);

// Singular values of w[m,n], sorted descending. Householder LQ reduction to a
// square factor followed by one-sided Jacobi, so small singular values carry
// absolute error O(eps * sigma_1) — a Gram-matrix route would square the
// condition number and bury exact zeros at ~sqrt(eps) * sigma_1, far above the
// 1e-10 rank threshold used by the verification suite.
std::vector<double> singular_values(const std::vector<double>& w, std::size_t m, std::size_t n);

std::size_t numerical_rank(const std::vector<double>& sigma, double tol = 1e-10);

}  // namespace owcl
