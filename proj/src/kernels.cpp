#include "whitebox/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace whitebox {

namespace {

template <typename T>
void check_nchw(const TensorT<T>& t, const char* op) {
  if (t.rank() != 4) {
    throw_shape(std::string(op) + ": expected rank-4 NCHW tensor, got " +
                t.shape_str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* input, int64_t c_in, int64_t h, int64_t w, int64_t k,
            int64_t stride, int64_t padding, T* col) {
  const int64_t h_out = conv_out_dim(h, k, stride, padding);
  const int64_t w_out = conv_out_dim(w, k, stride, padding);
  const int64_t patch = h_out * w_out;
  for (int64_t ci = 0; ci < c_in; ++ci) {
    const T* plane = input + ci * h * w;
    for (int64_t kh = 0; kh < k; ++kh) {
      for (int64_t kw = 0; kw < k; ++kw) {
        T* row = col + ((ci * k + kh) * k + kw) * patch;
        for (int64_t ho = 0; ho < h_out; ++ho) {
          const int64_t hi = ho * stride - padding + kh;
          if (hi < 0 || hi >= h) {
            std::fill(row + ho * w_out, row + (ho + 1) * w_out, T(0));
            continue;
          }
          const T* src = plane + hi * w;
          T* dst = row + ho * w_out;
          for (int64_t wo = 0; wo < w_out; ++wo) {
            const int64_t wi = wo * stride - padding + kw;
            dst[wo] = (wi >= 0 && wi < w) ? src[wi] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add counterpart of im2col.
template <typename T>
static void col2im_add(const T* col, int64_t c_in, int64_t h, int64_t w,
                       int64_t k, int64_t stride, int64_t padding, T* input) {
  const int64_t h_out = conv_out_dim(h, k, stride, padding);
  const int64_t w_out = conv_out_dim(w, k, stride, padding);
  const int64_t patch = h_out * w_out;
  for (int64_t ci = 0; ci < c_in; ++ci) {
    T* plane = input + ci * h * w;
    for (int64_t kh = 0; kh < k; ++kh) {
      for (int64_t kw = 0; kw < k; ++kw) {
        const T* row = col + ((ci * k + kh) * k + kw) * patch;
        for (int64_t ho = 0; ho < h_out; ++ho) {
          const int64_t hi = ho * stride - padding + kh;
          if (hi < 0 || hi >= h) continue;
          T* dst = plane + hi * w;
          const T* src = row + ho * w_out;
          for (int64_t wo = 0; wo < w_out; ++wo) {
            const int64_t wi = wo * stride - padding + kw;
            if (wi >= 0 && wi < w) dst[wi] += src[wo];
          }
        }
      }
    }
  }
}

template <typename T>
static void conv_check(const TensorT<T>& input, const TensorT<T>& weight,
                       int stride, int padding) {
  check_nchw(input, "conv2d");
  if (weight.rank() != 4) {
    throw_shape("conv2d: weight must be [C_out,C_in,K,K], got " +
                weight.shape_str());
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw_shape("conv2d: non-square kernel " + weight.shape_str());
  }
  if (input.dim(1) != weight.dim(1)) {
    throw_shape("conv2d: input " + input.shape_str() +
                " incompatible with weight " + weight.shape_str() +
                " (C_in mismatch)");
  }
  if (stride < 1) throw_shape("conv2d: stride must be >= 1");
  if (padding < 0) throw_shape("conv2d: padding must be >= 0");
  const int64_t k = weight.dim(2);
  if (conv_out_dim(input.dim(2), k, stride, padding) < 1 ||
      conv_out_dim(input.dim(3), k, stride, padding) < 1) {
    throw_shape("conv2d: kernel " + weight.shape_str() +
                " larger than padded input " + input.shape_str());
  }
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>* bias, int stride, int padding) {
  conv_check(input, weight, stride, padding);
  const int64_t n = input.dim(0), c_in = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3);
  const int64_t c_out = weight.dim(0), k = weight.dim(2);
  if (bias && !bias->empty() && bias->numel() != c_out) {
    throw_shape("conv2d: bias " + bias->shape_str() + " vs C_out " +
                std::to_string(c_out));
  }
  const bool has_bias = bias && !bias->empty();
  const int64_t h_out = conv_out_dim(h, k, stride, padding);
  const int64_t w_out = conv_out_dim(w, k, stride, padding);
  const int64_t patch = h_out * w_out;
  const int64_t ckk = c_in * k * k;

  TensorT<T> out({n, c_out, h_out, w_out});
  const T* wp = weight.data();
  const T* bp = has_bias ? bias->data() : nullptr;

#pragma omp parallel
  {
    std::vector<T> col(static_cast<size_t>(ckk * patch));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      im2col(input.data() + i * c_in * h * w, c_in, h, w, k, stride, padding,
             col.data());
      T* out_i = out.data() + i * c_out * patch;
      for (int64_t co = 0; co < c_out; ++co) {
        T* row = out_i + co * patch;
        const T init = bp ? bp[co] : T(0);
        std::fill(row, row + patch, init);
        const T* wrow = wp + co * ckk;
        for (int64_t kk = 0; kk < ckk; ++kk) {
          const T wv = wrow[kk];
          const T* crow = col.data() + kk * patch;
          for (int64_t p = 0; p < patch; ++p) row[p] += wv * crow[p];
        }
      }
    }
  }
  debug_check_finite(out, "conv2d_forward");
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& grad_out,
                               const TensorT<T>& saved_input,
                               const TensorT<T>& weight, bool has_bias,
                               int stride, int padding) {
  if (saved_input.empty()) {
    throw_state("conv2d_backward: missing saved input activation");
  }
  conv_check(saved_input, weight, stride, padding);
  const int64_t n = saved_input.dim(0), c_in = saved_input.dim(1);
  const int64_t h = saved_input.dim(2), w = saved_input.dim(3);
  const int64_t c_out = weight.dim(0), k = weight.dim(2);
  const int64_t h_out = conv_out_dim(h, k, stride, padding);
  const int64_t w_out = conv_out_dim(w, k, stride, padding);
  if (grad_out.shape() !=
      std::vector<int64_t>{n, c_out, h_out, w_out}) {
    throw_shape("conv2d_backward: grad_out " + grad_out.shape_str() +
                " does not match forward output [" + std::to_string(n) + "x" +
                std::to_string(c_out) + "x" + std::to_string(h_out) + "x" +
                std::to_string(w_out) + "]");
  }
  const int64_t patch = h_out * w_out;
  const int64_t ckk = c_in * k * k;

  Conv2dGrads<T> g;
  g.grad_input = TensorT<T>(saved_input.shape());
  g.grad_weight = TensorT<T>(weight.shape());
  if (has_bias) g.grad_bias = TensorT<T>({c_out});
  const T* wp = weight.data();

  // grad_input: each sample owned by one thread.
#pragma omp parallel
  {
    std::vector<T> colg(static_cast<size_t>(ckk * patch));
#pragma omp for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      std::fill(colg.begin(), colg.end(), T(0));
      const T* go_i = grad_out.data() + i * c_out * patch;
      for (int64_t co = 0; co < c_out; ++co) {
        const T* gorow = go_i + co * patch;
        const T* wrow = wp + co * ckk;
        for (int64_t kk = 0; kk < ckk; ++kk) {
          const T wv = wrow[kk];
          T* crow = colg.data() + kk * patch;
          for (int64_t p = 0; p < patch; ++p) crow[p] += wv * gorow[p];
        }
      }
      col2im_add(colg.data(), c_in, h, w, k, stride, padding,
                 g.grad_input.data() + i * c_in * h * w);
    }
  }

  // grad_weight, grad_bias: serial over samples, parallel over output
  // channels; the accumulation order per cell is independent of the
  // thread count.
  std::vector<T> col(static_cast<size_t>(ckk * patch));
  for (int64_t i = 0; i < n; ++i) {
    im2col(saved_input.data() + i * c_in * h * w, c_in, h, w, k, stride,
           padding, col.data());
    const T* go_i = grad_out.data() + i * c_out * patch;
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < c_out; ++co) {
      const T* gorow = go_i + co * patch;
      T* gwrow = g.grad_weight.data() + co * ckk;
      for (int64_t kk = 0; kk < ckk; ++kk) {
        const T* crow = col.data() + kk * patch;
        T acc = T(0);
        for (int64_t p = 0; p < patch; ++p) acc += gorow[p] * crow[p];
        gwrow[kk] += acc;
      }
      if (has_bias) {
        T acc = T(0);
        for (int64_t p = 0; p < patch; ++p) acc += gorow[p];
        g.grad_bias[co] += acc;
      }
    }
  }
  debug_check_finite(g.grad_input, "conv2d_backward");
  debug_check_finite(g.grad_weight, "conv2d_backward");
  return g;
}

// ---------------------------------------------------------------------------
// channel scale
// ---------------------------------------------------------------------------

template <typename T>
static void channel_scale_check(const TensorT<T>& input,
                                const TensorT<T>& scale) {
  check_nchw(input, "channel_scale");
  if (scale.rank() != 2 || scale.dim(0) != input.dim(0) ||
      scale.dim(1) != input.dim(1)) {
    throw_shape("channel_scale: scale " + scale.shape_str() +
                " does not match input " + input.shape_str());
  }
}

template <typename T>
TensorT<T> channel_scale_forward(const TensorT<T>& input,
                                 const TensorT<T>& scale) {
  channel_scale_check(input, scale);
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t plane = input.dim(2) * input.dim(3);
  TensorT<T> out(input.shape());
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T s = scale[i * c + ci];
      const T* src = input.data() + (i * c + ci) * plane;
      T* dst = out.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) dst[p] = src[p] * s;
    }
  }
  debug_check_finite(out, "channel_scale_forward");
  return out;
}

template <typename T>
void channel_scale_backward(const TensorT<T>& grad_out,
                            const TensorT<T>& saved_input,
                            const TensorT<T>& scale, TensorT<T>* grad_input,
                            TensorT<T>* grad_scale) {
  channel_scale_check(saved_input, scale);
  if (!grad_out.same_shape(saved_input)) {
    throw_shape("channel_scale_backward: grad_out " + grad_out.shape_str() +
                " vs input " + saved_input.shape_str());
  }
  const int64_t n = saved_input.dim(0), c = saved_input.dim(1);
  const int64_t plane = saved_input.dim(2) * saved_input.dim(3);
  if (grad_input) *grad_input = TensorT<T>(saved_input.shape());
  if (grad_scale) *grad_scale = TensorT<T>(scale.shape());
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (i * c + ci) * plane;
      const T s = scale[i * c + ci];
      const T* go = grad_out.data() + base;
      const T* x = saved_input.data() + base;
      if (grad_input) {
        T* gi = grad_input->data() + base;
        for (int64_t p = 0; p < plane; ++p) gi[p] = go[p] * s;
      }
      if (grad_scale) {
        T acc = T(0);
        for (int64_t p = 0; p < plane; ++p) acc += go[p] * x[p];
        (*grad_scale)[i * c + ci] = acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  const int64_t n = input.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    out[i] = input[i] > T(0) ? input[i] : T(0);
  }
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& grad_out,
                         const TensorT<T>& saved_input) {
  if (!grad_out.same_shape(saved_input)) {
    throw_shape("relu_backward: grad_out " + grad_out.shape_str() +
                " vs input " + saved_input.shape_str());
  }
  TensorT<T> gx(saved_input.shape());
  const int64_t n = saved_input.numel();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    gx[i] = saved_input[i] > T(0) ? grad_out[i] : T(0);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// max pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& input, int k, int stride,
                             std::vector<int64_t>* argmax) {
  check_nchw(input, "maxpool2d");
  if (k < 1 || stride < 1) throw_shape("maxpool2d: k and stride must be >= 1");
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t h = input.dim(2), w = input.dim(3);
  const int64_t h_out = (h - k) / stride + 1;
  const int64_t w_out = (w - k) / stride + 1;
  if (h_out < 1 || w_out < 1) {
    throw_shape("maxpool2d: window larger than input " + input.shape_str());
  }
  TensorT<T> out({n, c, h_out, w_out});
  if (argmax) argmax->assign(static_cast<size_t>(out.numel()), 0);
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* plane = input.data() + (i * c + ci) * h * w;
      const int64_t out_base = (i * c + ci) * h_out * w_out;
      for (int64_t ho = 0; ho < h_out; ++ho) {
        for (int64_t wo = 0; wo < w_out; ++wo) {
          int64_t best = (ho * stride) * w + wo * stride;
          T best_v = plane[best];
          for (int64_t kh = 0; kh < k; ++kh) {
            for (int64_t kw = 0; kw < k; ++kw) {
              const int64_t idx = (ho * stride + kh) * w + wo * stride + kw;
              if (plane[idx] > best_v) {
                best_v = plane[idx];
                best = idx;
              }
            }
          }
          out[out_base + ho * w_out + wo] = best_v;
          if (argmax) {
            (*argmax)[static_cast<size_t>(out_base + ho * w_out + wo)] =
                (i * c + ci) * h * w + best;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& grad_out,
                              const std::vector<int64_t>& argmax,
                              const std::vector<int64_t>& input_shape) {
  if (argmax.size() != static_cast<size_t>(grad_out.numel())) {
    throw_state("maxpool2d_backward: missing or stale argmax cache");
  }
  TensorT<T> gx(input_shape);
  const int64_t n = grad_out.dim(0), c = grad_out.dim(1);
  const int64_t plane_out = grad_out.dim(2) * grad_out.dim(3);
  // Parallel over (n,c): windows from different planes never collide.
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const int64_t base = (i * c + ci) * plane_out;
      for (int64_t p = 0; p < plane_out; ++p) {
        gx[argmax[static_cast<size_t>(base + p)]] += grad_out[base + p];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// global average pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> global_avgpool_forward(const TensorT<T>& input) {
  check_nchw(input, "global_avgpool");
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t plane = input.dim(2) * input.dim(3);
  TensorT<T> out({n, c});
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* src = input.data() + (i * c + ci) * plane;
      T acc = T(0);
      for (int64_t p = 0; p < plane; ++p) acc += src[p];
      out[i * c + ci] = acc / static_cast<T>(plane);
    }
  }
  return out;
}

template <typename T>
TensorT<T> global_avgpool_backward(const TensorT<T>& grad_out,
                                   const std::vector<int64_t>& input_shape) {
  TensorT<T> gx(input_shape);
  const int64_t n = input_shape[0], c = input_shape[1];
  const int64_t plane = input_shape[2] * input_shape[3];
  if (grad_out.shape() != std::vector<int64_t>{n, c}) {
    throw_shape("global_avgpool_backward: grad_out " + grad_out.shape_str());
  }
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T g = grad_out[i * c + ci] / static_cast<T>(plane);
      T* dst = gx.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) dst[p] = g;
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

template <typename T>
static void linear_check(const TensorT<T>& input, const TensorT<T>& weight) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw_shape("linear: expected input [N,D_in] and weight [D_out,D_in], got " +
                input.shape_str() + " and " + weight.shape_str());
  }
  if (input.dim(1) != weight.dim(1)) {
    throw_shape("linear: input " + input.shape_str() +
                " incompatible with weight " + weight.shape_str());
  }
}

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>* bias) {
  linear_check(input, weight);
  const int64_t n = input.dim(0), d_in = input.dim(1), d_out = weight.dim(0);
  const bool has_bias = bias && !bias->empty();
  if (has_bias && bias->numel() != d_out) {
    throw_shape("linear: bias " + bias->shape_str() + " vs D_out " +
                std::to_string(d_out));
  }
  TensorT<T> out({n, d_out});
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T* x = input.data() + i * d_in;
    T* y = out.data() + i * d_out;
    for (int64_t o = 0; o < d_out; ++o) {
      const T* wrow = weight.data() + o * d_in;
      T acc = has_bias ? (*bias)[o] : T(0);
      for (int64_t j = 0; j < d_in; ++j) acc += x[j] * wrow[j];
      y[o] = acc;
    }
  }
  debug_check_finite(out, "linear_forward");
  return out;
}

template <typename T>
void linear_backward(const TensorT<T>& grad_out, const TensorT<T>& saved_input,
                     const TensorT<T>& weight, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias) {
  if (saved_input.empty()) {
    throw_state("linear_backward: missing saved input activation");
  }
  linear_check(saved_input, weight);
  const int64_t n = saved_input.dim(0), d_in = saved_input.dim(1);
  const int64_t d_out = weight.dim(0);
  if (grad_out.shape() != std::vector<int64_t>{n, d_out}) {
    throw_shape("linear_backward: grad_out " + grad_out.shape_str());
  }
  if (grad_input) {
    *grad_input = TensorT<T>({n, d_in});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T* go = grad_out.data() + i * d_out;
      T* gx = grad_input->data() + i * d_in;
      for (int64_t o = 0; o < d_out; ++o) {
        const T g = go[o];
        const T* wrow = weight.data() + o * d_in;
        for (int64_t j = 0; j < d_in; ++j) gx[j] += g * wrow[j];
      }
    }
  }
  if (grad_weight) {
    *grad_weight = TensorT<T>(weight.shape());
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < d_out; ++o) {
      T* gwrow = grad_weight->data() + o * d_in;
      for (int64_t i = 0; i < n; ++i) {
        const T g = grad_out[i * d_out + o];
        const T* x = saved_input.data() + i * d_in;
        for (int64_t j = 0; j < d_in; ++j) gwrow[j] += g * x[j];
      }
    }
  }
  if (grad_bias) {
    *grad_bias = TensorT<T>({d_out});
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < d_out; ++o) {
      T acc = T(0);
      for (int64_t i = 0; i < n; ++i) acc += grad_out[i * d_out + o];
      (*grad_bias)[o] = acc;
    }
  }
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> batchnorm2d_forward_train(const TensorT<T>& input,
                                     const TensorT<T>& gamma,
                                     const TensorT<T>& beta,
                                     TensorT<T>& running_mean,
                                     TensorT<T>& running_var, T momentum,
                                     T eps, BatchNormCache<T>* cache) {
  check_nchw(input, "batchnorm2d");
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t plane = input.dim(2) * input.dim(3);
  const int64_t m = n * plane;
  if (gamma.numel() != c || beta.numel() != c) {
    throw_shape("batchnorm2d: affine params vs C=" + std::to_string(c));
  }
  TensorT<T> out(input.shape());
  if (cache) {
    cache->xhat = TensorT<T>(input.shape());
    cache->inv_std.assign(static_cast<size_t>(c), T(0));
  }
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < c; ++ci) {
    // batch moments over (N,H,W) for this channel
    T mean = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T* src = input.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) mean += src[p];
    }
    mean /= static_cast<T>(m);
    T var = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T* src = input.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        const T d = src[p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<T>(m);
    const T inv_std = T(1) / std::sqrt(var + eps);
    const T g = gamma[ci], b = beta[ci];
    for (int64_t i = 0; i < n; ++i) {
      const T* src = input.data() + (i * c + ci) * plane;
      T* dst = out.data() + (i * c + ci) * plane;
      T* xh = cache ? cache->xhat.data() + (i * c + ci) * plane : nullptr;
      for (int64_t p = 0; p < plane; ++p) {
        const T norm = (src[p] - mean) * inv_std;
        if (xh) xh[p] = norm;
        dst[p] = g * norm + b;
      }
    }
    if (cache) cache->inv_std[static_cast<size_t>(ci)] = inv_std;
    running_mean[ci] = (T(1) - momentum) * running_mean[ci] + momentum * mean;
    running_var[ci] = (T(1) - momentum) * running_var[ci] + momentum * var;
  }
  debug_check_finite(out, "batchnorm2d_forward_train");
  return out;
}

template <typename T>
TensorT<T> batchnorm2d_forward_eval(const TensorT<T>& input,
                                    const TensorT<T>& gamma,
                                    const TensorT<T>& beta,
                                    const TensorT<T>& running_mean,
                                    const TensorT<T>& running_var, T eps) {
  check_nchw(input, "batchnorm2d");
  const int64_t n = input.dim(0), c = input.dim(1);
  const int64_t plane = input.dim(2) * input.dim(3);
  TensorT<T> out(input.shape());
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      const T inv_std = T(1) / std::sqrt(running_var[ci] + eps);
      const T g = gamma[ci], b = beta[ci], mu = running_mean[ci];
      const T* src = input.data() + (i * c + ci) * plane;
      T* dst = out.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        dst[p] = g * (src[p] - mu) * inv_std + b;
      }
    }
  }
  debug_check_finite(out, "batchnorm2d_forward_eval");
  return out;
}

template <typename T>
void batchnorm2d_backward(const TensorT<T>& grad_out,
                          const BatchNormCache<T>& cache,
                          const TensorT<T>& gamma, TensorT<T>* grad_input,
                          TensorT<T>* grad_gamma, TensorT<T>* grad_beta) {
  if (cache.xhat.empty()) {
    throw_state("batchnorm2d_backward: missing train-mode cache");
  }
  const TensorT<T>& xhat = cache.xhat;
  if (!grad_out.same_shape(xhat)) {
    throw_shape("batchnorm2d_backward: grad_out " + grad_out.shape_str());
  }
  const int64_t n = xhat.dim(0), c = xhat.dim(1);
  const int64_t plane = xhat.dim(2) * xhat.dim(3);
  const int64_t m = n * plane;
  if (grad_input) *grad_input = TensorT<T>(xhat.shape());
  if (grad_gamma) *grad_gamma = TensorT<T>({c});
  if (grad_beta) *grad_beta = TensorT<T>({c});
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < c; ++ci) {
    T sum_g = T(0), sum_gx = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t base = (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        sum_g += grad_out[base + p];
        sum_gx += grad_out[base + p] * xhat[base + p];
      }
    }
    if (grad_gamma) (*grad_gamma)[ci] = sum_gx;
    if (grad_beta) (*grad_beta)[ci] = sum_g;
    if (grad_input) {
      const T scale = gamma[ci] * cache.inv_std[static_cast<size_t>(ci)];
      const T mean_g = sum_g / static_cast<T>(m);
      const T mean_gx = sum_gx / static_cast<T>(m);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t base = (i * c + ci) * plane;
        for (int64_t p = 0; p < plane; ++p) {
          (*grad_input)[base + p] =
              scale * (grad_out[base + p] - mean_g - xhat[base + p] * mean_gx);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

template <typename T>
T softmax_cross_entropy(const TensorT<T>& logits, const TensorT<T>& labels,
                        TensorT<T>* grad_logits) {
  if (logits.rank() != 2) {
    throw_shape("softmax_cross_entropy: logits must be [N,D], got " +
                logits.shape_str());
  }
  if (!labels.same_shape(logits)) {
    throw_shape("softmax_cross_entropy: labels " + labels.shape_str() +
                " vs logits " + logits.shape_str());
  }
  const int64_t n = logits.dim(0), d = logits.dim(1);
  if (n == 0) throw_shape("softmax_cross_entropy: empty batch");
  if (grad_logits) *grad_logits = TensorT<T>(logits.shape());

  // Validate one-hot rows before entering the parallel region; exceptions
  // may not escape an OpenMP loop.
  std::vector<int64_t> truth_idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T* lab = labels.data() + i * d;
    int64_t truth = -1;
    for (int64_t j = 0; j < d; ++j) {
      if (lab[j] == T(1)) {
        truth = (truth == -1) ? j : -2;
      } else if (lab[j] != T(0)) {
        truth = -2;
        break;
      }
    }
    if (truth < 0) {
      throw_data("softmax_cross_entropy: label row " + std::to_string(i) +
                 " is not one-hot");
    }
    truth_idx[static_cast<size_t>(i)] = truth;
  }

  std::vector<T> row_loss(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * d;
    const T* lab = labels.data() + i * d;
    const int64_t truth = truth_idx[static_cast<size_t>(i)];
    T mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < d; ++j) sum += std::exp(row[j] - mx);
    const T log_sum = std::log(sum) + mx;
    row_loss[static_cast<size_t>(i)] = log_sum - row[truth];
    if (grad_logits) {
      T* g = grad_logits->data() + i * d;
      for (int64_t j = 0; j < d; ++j) {
        const T p = std::exp(row[j] - log_sum);
        g[j] = (p - lab[j]) / static_cast<T>(n);
      }
    }
  }
  T loss = T(0);
  for (int64_t i = 0; i < n; ++i) loss += row_loss[static_cast<size_t>(i)];
  return loss / static_cast<T>(n);
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

#define WHITEBOX_INSTANTIATE_KERNELS(T)                                        \
  template void im2col<T>(const T*, int64_t, int64_t, int64_t, int64_t,        \
                          int64_t, int64_t, T*);                               \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>*, int, int);          \
  template Conv2dGrads<T> conv2d_backward<T>(                                  \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, bool, int,      \
      int);                                                                    \
  template TensorT<T> channel_scale_forward<T>(const TensorT<T>&,              \
                                               const TensorT<T>&);             \
  template void channel_scale_backward<T>(const TensorT<T>&,                   \
                                          const TensorT<T>&,                   \
                                          const TensorT<T>&, TensorT<T>*,      \
                                          TensorT<T>*);                        \
  template TensorT<T> relu_forward<T>(const TensorT<T>&);                      \
  template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);  \
  template TensorT<T> maxpool2d_forward<T>(const TensorT<T>&, int, int,        \
                                           std::vector<int64_t>*);             \
  template TensorT<T> maxpool2d_backward<T>(const TensorT<T>&,                 \
                                            const std::vector<int64_t>&,       \
                                            const std::vector<int64_t>&);      \
  template TensorT<T> global_avgpool_forward<T>(const TensorT<T>&);            \
  template TensorT<T> global_avgpool_backward<T>(                              \
      const TensorT<T>&, const std::vector<int64_t>&);                         \
  template TensorT<T> linear_forward<T>(const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>*);                    \
  template void linear_backward<T>(const TensorT<T>&, const TensorT<T>&,       \
                                   const TensorT<T>&, TensorT<T>*,             \
                                   TensorT<T>*, TensorT<T>*);                  \
  template TensorT<T> batchnorm2d_forward_train<T>(                            \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, TensorT<T>&,    \
      TensorT<T>&, T, T, BatchNormCache<T>*);                                  \
  template TensorT<T> batchnorm2d_forward_eval<T>(                             \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,                 \
      const TensorT<T>&, const TensorT<T>&, T);                                \
  template void batchnorm2d_backward<T>(                                       \
      const TensorT<T>&, const BatchNormCache<T>&, const TensorT<T>&,          \
      TensorT<T>*, TensorT<T>*, TensorT<T>*);                                  \
  template T softmax_cross_entropy<T>(const TensorT<T>&, const TensorT<T>&,    \
                                      TensorT<T>*);

WHITEBOX_INSTANTIATE_KERNELS(float)
WHITEBOX_INSTANTIATE_KERNELS(double)

#undef WHITEBOX_INSTANTIATE_KERNELS

}  // namespace whitebox
