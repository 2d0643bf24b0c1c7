#ifndef WHITEBOX_REFERENCE_HPP_
#define WHITEBOX_REFERENCE_HPP_

#include <cstdint>

#include "whitebox/tensor.hpp"

// Naive single-threaded reference implementations. These stay in the
// shipped library as the oracle side of the dual-route checks: the
// OpenMP kernels must reproduce them on every tested shape, and the
// kernel benchmark reports the speedup against them.
namespace whitebox::ref {

// Direct six-loop cross-correlation. When mac_count is non-null it is
// incremented once per multiply-accumulate, which doubles as the audit
// path for the analytic FLOPs model.
template <typename T>
TensorT<T> conv2d_forward_naive(const TensorT<T>& input,
                                const TensorT<T>& weight,
                                const TensorT<T>* bias, int stride,
                                int padding, uint64_t* mac_count = nullptr) {
  const int64_t n = input.dim(0), c_in = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3);
  const int64_t c_out = weight.dim(0), k = weight.dim(2);
  const int64_t h_out = (h + 2 * padding - k) / stride + 1;
  const int64_t w_out = (w + 2 * padding - k) / stride + 1;
  const bool has_bias = bias && !bias->empty();
  TensorT<T> out({n, c_out, h_out, w_out});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t co = 0; co < c_out; ++co) {
      for (int64_t ho = 0; ho < h_out; ++ho) {
        for (int64_t wo = 0; wo < w_out; ++wo) {
          T acc = has_bias ? (*bias)[co] : T(0);
          for (int64_t ci = 0; ci < c_in; ++ci) {
            for (int64_t kh = 0; kh < k; ++kh) {
              for (int64_t kw = 0; kw < k; ++kw) {
                // Padded taps still count as MACs (multiply by zero),
                // matching the K^2*C_in*C_out*H'*W' accounting.
                if (mac_count) ++(*mac_count);
                const int64_t hi = ho * stride - padding + kh;
                const int64_t wi = wo * stride - padding + kw;
                if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                acc += input[((i * c_in + ci) * h + hi) * w + wi] *
                       weight[((co * c_in + ci) * k + kh) * k + kw];
              }
            }
          }
          out[((i * c_out + co) * h_out + ho) * w_out + wo] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> channel_scale_naive(const TensorT<T>& input,
                               const TensorT<T>& scale) {
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3);
  TensorT<T> out(input.shape());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      for (int64_t p = 0; p < h * w; ++p) {
        out[(i * c + ci) * h * w + p] =
            input[(i * c + ci) * h * w + p] * scale[i * c + ci];
      }
    }
  }
  return out;
}

}  // namespace whitebox::ref

#endif  // WHITEBOX_REFERENCE_HPP_
