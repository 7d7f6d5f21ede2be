#pragma once

#include <span>
#include <vector>

#include "sagvit/tensor.hpp"

namespace sagvit {

inline constexpr double kLayerNormEps = 1e-5;

// Matrix product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[m x n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);

// x[m x in] * weight[out x in]^T (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& weight);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
// Gradient at exactly 0 is `slope`.
Tensor leaky_relu(const Tensor& x, double slope);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// Row-wise normalization of x[rows x d] (rank 1 is treated as one row).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

Tensor sum(const Tensor& x);
// Mean over the leading (token) axis: [n x d] -> [d].
Tensor mean_rows(const Tensor& x);

// out[i] = x[indices[i]], reshaped to `shape`. Backward scatters.
Tensor gather(const Tensor& x, std::span<const std::size_t> indices, Shape shape);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);

// Mean negative log-likelihood of logits[B x C] under integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace sagvit
