#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "pcdiff/tensor.hpp"

namespace pcd::ad {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor silu(const Tensor& x);
/// Swish with unit gate is the same function as SiLU.
inline Tensor swish(const Tensor& x) { return silu(x); }
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- shape & indexing ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose2d(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Row lookup: out[i] = x[idx[i]]. Doubles as the embedding op and as a row
/// permutation when idx is bijective.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> idx) {
    return gather_rows(table, idx);
}
Tensor reverse_cols(const Tensor& x);
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
Tensor add_colvec(const Tensor& x, const Tensor& v);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = x.w + b over the last axis of x; leading axes are preserved.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Broadcast product with a single-element tensor (differentiable in both).
Tensor mul_bscalar(const Tensor& x, const Tensor& s);

// ---- convolution & normalization ----
/// Depthwise 1-D convolution over x[C,L] with kernel[C,W]. Causal mode pads
/// left with W-1 zeros so output t never sees inputs after t; non-causal mode
/// centers the kernel.
Tensor conv1d(const Tensor& x, const Tensor& kernel, bool causal);
/// Cross-correlation of x[Cin,L,L,L] with w[Cout,Cin,k,k,k] plus bias.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding);
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// ---- structured sparse ----
/// Bucket mean: out[b] = mean of rows i with bucket[i] == b, zero for empty
/// buckets. bucket.size() must equal the row count of x.
Tensor scatter_mean_rows(const Tensor& x, std::span<const std::size_t> bucket,
                         std::size_t bucket_count);
/// Sparse blend: out[m] = sum_k w[m*K+k] * table[idx[m*K+k]]. Weights are
/// data (no gradient is produced for them).
Tensor blend_rows(const Tensor& table, std::span<const std::size_t> idx,
                  std::span<const double> w, std::size_t K);

}  // namespace pcd::ad
