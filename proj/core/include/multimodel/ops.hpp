#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "multimodel/rng.hpp"
#include "multimodel/tensor.hpp"

// Differentiable operations. Sequence tensors are [B, L, C] and spatial
// tensors are [B, H, W, C]; everything is channels-last.
namespace mm {

enum class Padding {
  same,  // centred, output extent ceil(n / stride)
  left,  // all padding before position 0 along the time axis (causal)
};

struct Pair {
  std::size_t h = 1;
  std::size_t w = 1;
};

// Elementwise. `b` may equal `a` in shape or match a suffix of it (broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);

/// Inverted dropout: survivors are scaled by 1/(1-rate) when training; identity
/// otherwise. Element i keeps iff rng.uniform_at(i) >= rate.
Tensor dropout(const Tensor& x, double rate, const RngStream& rng, bool train);

/// Per-channel convolution. `x` is [B,L,C] (kernel [h,1,C]) or [B,H,W,C]
/// (kernel [h,w,C]). Left padding applies to the first spatial axis only.
Tensor depthwise_conv(const Tensor& x, const Tensor& kernel, Pair stride, Pair dilation, Padding padding);

/// Mixes the last axis: x[..., Cin] * w[Cin, Cout].
Tensor pointwise_conv(const Tensor& x, const Tensor& w);

/// Depthwise convolution followed by a pointwise projection.
Tensor sep_conv(const Tensor& x, const Tensor& depthwise, const Tensor& pointwise, Pair stride, Pair dilation,
                Padding padding);

/// Normalizes the last axis to zero mean and unit (population) variance, then
/// applies gain and bias of shape [C].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

/// Max over a window of [B,H,W,C] with same padding (out-of-range cells ignored).
Tensor max_pool(const Tensor& x, Pair window, Pair stride);

/// Mean over every axis between batch and channels: [B, ..., C] -> [B, C].
Tensor global_avg_pool(const Tensor& x);

/// Rows of `table` [V,C] gathered by `ids`; result shape is ids_shape + [C].
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);

/// [M,K] x [K,N].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums every axis but the last: [..., C] -> [C].
Tensor sum_rows(const Tensor& x);

/// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]] where the
/// rows are the last-axis vectors of `logits`. Returns a scalar.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const double> weights);

namespace kernels {
/// c[M,N] += a[M,K] * b[K,N]. Each output element accumulates over k in
/// ascending order, independently of M, so rows never influence each other's
/// rounding.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
/// out[N,M] = in[M,N]^T.
void transpose(const double* in, double* out, std::size_t m, std::size_t n);
}  // namespace kernels

}  // namespace mm
