#include "fsg/detail/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace fsg::kernels {

namespace {

constexpr std::size_t kChunk = 64;

// Accumulates a chunk of `NO` outputs for `NR` rows. Each output is
// b[o] then fma over i = 0..in-1 in order.
template <std::size_t NR, std::size_t NO>
inline void linear_block(const float* __restrict x, std::size_t ldx, std::size_t in,
                         const float* __restrict w, std::size_t ldw, const float* __restrict b,
                         float* __restrict y, std::size_t ldy) {
  float acc[NR][NO];
  for (std::size_t r = 0; r < NR; ++r) {
    for (std::size_t o = 0; o < NO; ++o) acc[r][o] = b[o];
  }
  for (std::size_t i = 0; i < in; ++i) {
    const float* wi = w + i * ldw;
    for (std::size_t r = 0; r < NR; ++r) {
      const float xi = x[r * ldx + i];
      for (std::size_t o = 0; o < NO; ++o) acc[r][o] = std::fma(xi, wi[o], acc[r][o]);
    }
  }
  for (std::size_t r = 0; r < NR; ++r) {
    for (std::size_t o = 0; o < NO; ++o) y[r * ldy + o] = acc[r][o];
  }
}

template <std::size_t NO>
void linear_chunk(const float* x, std::size_t rows, std::size_t in, const float* w, const float* b,
                  std::size_t out, float* y) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) linear_block<4, NO>(x + r * in, in, in, w, out, b, y + r * out, out);
  for (; r < rows; ++r) linear_block<1, NO>(x + r * in, in, in, w, out, b, y + r * out, out);
}

}  // namespace

// Output chunks are the outer loop so a chunk of W stays in cache while
// every row block streams past it.
void linear(const float* x, std::size_t rows, std::size_t in, const float* w, const float* b,
            std::size_t out, float* y) {
  std::size_t o = 0;
  for (; o + kChunk <= out; o += kChunk) linear_chunk<kChunk>(x, rows, in, w + o, b + o, out, y + o);
  for (; o + 16 <= out; o += 16) linear_chunk<16>(x, rows, in, w + o, b + o, out, y + o);
  for (; o < out; ++o) linear_chunk<1>(x, rows, in, w + o, b + o, out, y + o);
}

float dot(const float* a, const float* b, std::size_t n) {
  float lanes[16] = {};
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    for (std::size_t j = 0; j < 16; ++j) lanes[j] = std::fma(a[i + j], b[i + j], lanes[j]);
  }
  for (std::size_t j = 0; i < n; ++i, ++j) lanes[j] = std::fma(a[i], b[i], lanes[j]);
  for (std::size_t width = 8; width >= 1; width /= 2) {
    for (std::size_t j = 0; j < width; ++j) lanes[j] += lanes[j + width];
  }
  return lanes[0];
}

void layer_norm(const float* x, const float* gain, const float* bias, std::size_t n, float* y) {
  float mean = 0.0f;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const float d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<float>(n);
  const float rstd = 1.0f / std::sqrt(var + 1e-5f);
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
}

// Same vectorized tanh as the training path.
void gelu(float* x, std::size_t n) {
  constexpr float c = 0.7978845608028654f;
  Eigen::Map<Eigen::ArrayXf> a(x, static_cast<Eigen::Index>(n));
  a = 0.5f * a * (1.0f + (c * (a + 0.044715f * a.cube())).tanh());
}

void attend(const float* q, const float* k, const float* v, std::size_t len, std::size_t stride,
            std::size_t head_dim, float scale, float* scores, float* out) {
  float m = -INFINITY;
  for (std::size_t u = 0; u < len; ++u) {
    scores[u] = dot(q, k + u * stride, head_dim) * scale;
    m = std::max(m, scores[u]);
  }
  float sum = 0.0f;
  for (std::size_t u = 0; u < len; ++u) {
    scores[u] = std::exp(scores[u] - m);
    sum += scores[u];
  }
  std::fill(out, out + head_dim, 0.0f);
  for (std::size_t u = 0; u < len; ++u) {
    const float* vu = v + u * stride;
    for (std::size_t d = 0; d < head_dim; ++d) out[d] = std::fma(scores[u], vu[d], out[d]);
  }
  const float inv = 1.0f / sum;
  for (std::size_t d = 0; d < head_dim; ++d) out[d] *= inv;
}

}  // namespace fsg::kernels
