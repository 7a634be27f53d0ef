#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

// Differentiable operations. Every function records a backward step on the
// current tape when at least one input requires gradients. Matrix operations
// expect rank-2 tensors; bias vectors have shape [q].

Tensor matmul(const Tensor& a, const Tensor& b);
// a x b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar factor);

// x[p x q] + bias[q] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// x[p x q] * v[q] broadcast over rows.
Tensor mul_row(const Tensor& x, const Tensor& v);
// x * w + b
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Row-wise softmax with max subtraction. Throws NumericError on NaN input.
Tensor softmax_rows(const Tensor& x);
// Row-wise layer normalization with affine parameters gamma[q], beta[q].
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       Scalar eps = Scalar(1e-6));
// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);

// Elementwise max / mean across same-shape tensors. Max routes the gradient
// to the first maximal input per coordinate.
Tensor max_over(std::span<const Tensor> xs);
Tensor mean_over(std::span<const Tensor> xs);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Mean cross-entropy over rows of logits[P x K] whose label is not ignored.
// Throws ContractError when every row is ignored.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::uint8_t> labels,
                          std::uint8_t ignore_label = kIgnoreLabel);

// Raw kernels shared with tests and benchmarks: C[p x s] += A[p x q] * B[q x s].
void gemm_accumulate(std::size_t p, std::size_t q, std::size_t s, const Scalar* a,
                     const Scalar* b, Scalar* c);

REINLAB_NAMESPACE_END
