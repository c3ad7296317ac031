#pragma once

#include <vector>

#include "fiat/tape.hpp"

namespace fiat {

// Differentiable primitives. Each records one node on the arguments' tape;
// mixing tapes raises TapeMismatch.

/// a[m×k] · b[k×n] -> [m×n]
Var matmul(const Var& a, const Var& b);

/// a[m×k] · b[n×k]ᵀ -> [m×n]
Var matmul_nt(const Var& a, const Var& b);

/// Elementwise sum of same-shape operands.
Var add(const Var& a, const Var& b);

/// Sum of any number of same-shape operands.
Var add_n(const std::vector<Var>& parts);

/// x[m×n] + row[1×n] broadcast over rows.
Var add_rowvec(const Var& x, const Var& row);

/// Elementwise product of same-shape operands.
Var mul(const Var& a, const Var& b);

/// x[m×n] ∘ row[1×n] broadcast over rows.
Var mul_rowvec(const Var& x, const Var& row);

/// Multiplication by a compile-time constant.
Var scale(const Var& x, double c);

/// Row-wise normalization to zero mean / unit variance (no affine part;
/// compose with mul_rowvec/add_rowvec for gain and bias).
Var layernorm(const Var& x, double eps = 1e-5);

/// Row-wise softmax over a square score matrix with a causal mask:
/// row i is a distribution over columns 0..i, zero above the diagonal.
Var causal_softmax(const Var& scores);

/// Gaussian error linear unit (tanh form).
Var gelu(const Var& x);

/// Selects rows of `table` at `ids`; gradients scatter-add back.
Var gather_rows(const Var& table, std::vector<int> ids);

/// Columns [begin, end) of x.
Var slice_cols(const Var& x, int begin, int end);

/// Horizontal concatenation; parts must share their row count.
Var concat_cols(const std::vector<Var>& parts);

/// Weighted mean of per-row −log softmax(logits)[target].
/// Rows with weight 0 are ignored (their target may be any in-range id).
/// Weights must be non-negative with a positive sum.
Var cross_entropy(const Var& logits, std::vector<int> targets, std::vector<double> weights);

/// Single-distribution form: logits is 1×V, returns −log softmax(logits)[target].
Var softmax_cross_entropy(const Var& logits, int target);

// Tape-free numeric kernels shared with inference and tests.
Mat softmax_rows(const Mat& x);
Mat log_softmax_rows(const Mat& x);

}  // namespace fiat
