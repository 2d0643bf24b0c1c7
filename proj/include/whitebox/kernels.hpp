#ifndef WHITEBOX_KERNELS_HPP_
#define WHITEBOX_KERNELS_HPP_

#include <cstdint>
#include <vector>

#include "whitebox/tensor.hpp"

// Forward/backward CPU kernels. All kernels are OpenMP-parallel with a
// fixed per-element accumulation order, so results are bit-identical for
// any thread count. Serial reference implementations used as test oracles
// live in whitebox/reference.hpp.
namespace whitebox {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride,
                            int64_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

// --- convolution (cross-correlation) ---

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>* bias, int stride, int padding);

template <typename T>
struct Conv2dGrads {
  TensorT<T> grad_input;
  TensorT<T> grad_weight;
  TensorT<T> grad_bias;  // empty when the layer has no bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const TensorT<T>& grad_out,
                               const TensorT<T>& saved_input,
                               const TensorT<T>& weight, bool has_bias,
                               int stride, int padding);

// Patch lowering for the GEMM-shaped conv path. col is row-major
// [C_in*K*K, H_out*W_out]; exposed for the kernel benchmark.
template <typename T>
void im2col(const T* input, int64_t c_in, int64_t h, int64_t w, int64_t k,
            int64_t stride, int64_t padding, T* col);

// --- per-(sample, channel) scaling ---

template <typename T>
TensorT<T> channel_scale_forward(const TensorT<T>& input,
                                 const TensorT<T>& scale);

template <typename T>
void channel_scale_backward(const TensorT<T>& grad_out,
                            const TensorT<T>& saved_input,
                            const TensorT<T>& scale, TensorT<T>* grad_input,
                            TensorT<T>* grad_scale);

// --- relu ---

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input);

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& grad_out,
                         const TensorT<T>& saved_input);

// --- max pooling ---

template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& input, int k, int stride,
                             std::vector<int64_t>* argmax);

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& grad_out,
                              const std::vector<int64_t>& argmax,
                              const std::vector<int64_t>& input_shape);

// --- global average pooling: [N,C,H,W] -> [N,C] ---

template <typename T>
TensorT<T> global_avgpool_forward(const TensorT<T>& input);

template <typename T>
TensorT<T> global_avgpool_backward(const TensorT<T>& grad_out,
                                   const std::vector<int64_t>& input_shape);

// --- fully connected: y = x W^T + b, x [N,D_in], W [D_out,D_in] ---

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& input, const TensorT<T>& weight,
                          const TensorT<T>* bias);

template <typename T>
void linear_backward(const TensorT<T>& grad_out, const TensorT<T>& saved_input,
                     const TensorT<T>& weight, TensorT<T>* grad_input,
                     TensorT<T>* grad_weight, TensorT<T>* grad_bias);

// --- batch normalization over (N,H,W) per channel ---

template <typename T>
struct BatchNormCache {
  TensorT<T> xhat;             // normalized pre-affine activations
  std::vector<T> inv_std;      // per-channel 1/sqrt(var + eps)
};

// Train mode: normalizes with batch statistics and updates the running
// averages in place (running <- (1-momentum)*running + momentum*batch).
template <typename T>
TensorT<T> batchnorm2d_forward_train(const TensorT<T>& input,
                                     const TensorT<T>& gamma,
                                     const TensorT<T>& beta,
                                     TensorT<T>& running_mean,
                                     TensorT<T>& running_var, T momentum,
                                     T eps, BatchNormCache<T>* cache);

template <typename T>
TensorT<T> batchnorm2d_forward_eval(const TensorT<T>& input,
                                    const TensorT<T>& gamma,
                                    const TensorT<T>& beta,
                                    const TensorT<T>& running_mean,
                                    const TensorT<T>& running_var, T eps);

template <typename T>
void batchnorm2d_backward(const TensorT<T>& grad_out,
                          const BatchNormCache<T>& cache,
                          const TensorT<T>& gamma, TensorT<T>* grad_input,
                          TensorT<T>* grad_gamma, TensorT<T>* grad_beta);

// --- loss ---

// Mean over the batch of -log softmax at the true class. labels must be
// one-hot rows. grad_logits, when non-null, receives (softmax - label)/N.
template <typename T>
T softmax_cross_entropy(const TensorT<T>& logits, const TensorT<T>& labels,
                        TensorT<T>* grad_logits);

}  // namespace whitebox

#endif  // WHITEBOX_KERNELS_HPP_
