#pragma once

// Row-wise numeric kernels. Each output row is computed from its own input
// row with a fixed reduction order, so evaluating one row (KV-cached decoding)
// or many rows (teacher-forced training) gives bit-identical results.

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace levo::kernels {

// y[n, out] = x[n, in] * W[in, out] (+ b[out])
template <typename T>
void linear_rows(const T* x, std::int64_t n, std::int64_t in, const T* w, const T* b,
                 std::int64_t out, T* y) {
  for (std::int64_t i = 0; i < n; ++i) {
    T* yr = y + i * out;
    const T* xr = x + i * in;
    for (std::int64_t j = 0; j < out; ++j) yr[j] = T(0);
    for (std::int64_t p = 0; p < in; ++p) {
      const T a = xr[p];
      const T* wr = w + p * out;
      for (std::int64_t j = 0; j < out; ++j) yr[j] += a * wr[j];
    }
    if (b != nullptr)
      for (std::int64_t j = 0; j < out; ++j) yr[j] += b[j];
  }
}

template <typename T>
inline T gelu(T x) {
  const T c = T(0.7978845608028654);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
inline T gelu_grad(T x) {
  const T c = T(0.7978845608028654);
  const T u = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
constexpr T kLayerNormEps = T(1e-5);

// Returns 1/std so the backward pass can reuse it.
template <typename T>
T layer_norm_row(const T* x, std::int64_t d, const T* gamma, const T* beta, T* y, T* xhat) {
  T mean = T(0);
  for (std::int64_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var = T(0);
  for (std::int64_t j = 0; j < d; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rstd = T(1) / std::sqrt(var + kLayerNormEps<T>);
  for (std::int64_t j = 0; j < d; ++j) {
    const T h = (x[j] - mean) * rstd;
    if (xhat != nullptr) xhat[j] = h;
    y[j] = h * gamma[j] + beta[j];
  }
  return rstd;
}

// One attention head for one query row over keys [0, n_keys). K and V rows are
// `stride` apart. `probs` receives the softmax weights (n_keys entries).
template <typename T>
void attend_row(const T* q, const T* k, const T* v, std::int64_t n_keys, std::int64_t head_dim,
                std::int64_t stride, T scale, T* probs, T* out) {
  T max_s = -INFINITY;
  for (std::int64_t j = 0; j < n_keys; ++j) {
    const T* kr = k + j * stride;
    T s = T(0);
    for (std::int64_t c = 0; c < head_dim; ++c) s += q[c] * kr[c];
    s *= scale;
    probs[j] = s;
    max_s = std::max(max_s, s);
  }
  T denom = T(0);
  for (std::int64_t j = 0; j < n_keys; ++j) {
    probs[j] = std::exp(probs[j] - max_s);
    denom += probs[j];
  }
  const T inv = T(1) / denom;
  for (std::int64_t c = 0; c < head_dim; ++c) out[c] = T(0);
  for (std::int64_t j = 0; j < n_keys; ++j) {
    probs[j] *= inv;
    const T p = probs[j];
    const T* vr = v + j * stride;
    for (std::int64_t c = 0; c < head_dim; ++c) out[c] += p * vr[c];
  }
}

// log-softmax of one row into `out`; returns log-sum-exp.
template <typename T>
T log_softmax_row(const T* logits, std::int64_t n, T* out) {
  T m = -INFINITY;
  for (std::int64_t j = 0; j < n; ++j) m = std::max(m, logits[j]);
  T s = T(0);
  for (std::int64_t j = 0; j < n; ++j) s += std::exp(logits[j] - m);
  const T lse = m + std::log(s);
  if (out != nullptr)
    for (std::int64_t j = 0; j < n; ++j) out[j] = logits[j] - lse;
  return lse;
}

}  // namespace levo::kernels
