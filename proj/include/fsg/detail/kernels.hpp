#pragma once
// Float kernels for the inference path. Every output element is produced by
// the same sequence of fused multiply-adds whatever the number of rows in the
// call, so a prefix evaluated in one pass matches token-by-token decoding
// bit for bit.

#include <cstddef>

namespace fsg::kernels {

/// y[r, :] = b + x[r, :] * W for W stored input-major (in x out).
void linear(const float* x, std::size_t rows, std::size_t in, const float* w, const float* b,
            std::size_t out, float* y);

/// Fixed-order dot product.
float dot(const float* a, const float* b, std::size_t n);

void layer_norm(const float* x, const float* gain, const float* bias, std::size_t n, float* y);

void gelu(float* x, std::size_t n);

/// Causal attention of one query row against cached rows 0..len-1 for one
/// head: out = softmax(q.k_u * scale) weighted sum of v_u. k and v are
/// strided by `stride` floats per row.
void attend(const float* q, const float* k, const float* v, std::size_t len, std::size_t stride,
            std::size_t head_dim, float scale, float* scores, float* out);

}  // namespace fsg::kernels
