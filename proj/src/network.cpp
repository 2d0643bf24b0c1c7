#include "whitebox/network.hpp"

namespace whitebox {

namespace {

void add_channel_bias(Tensor& x, const Tensor& bias) {
  const int64_t n = x.dim(0), c = x.dim(1);
  const int64_t plane = x.dim(2) * x.dim(3);
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ci = 0; ci < c; ++ci) {
      float* dst = x.data() + (i * c + ci) * plane;
      const float b = bias[ci];
      for (int64_t p = 0; p < plane; ++p) dst[p] += b;
    }
  }
}

// Sum of grad_out over (N,H,W) per channel, accumulated into grad_bias.
void accumulate_bias_grad(const Tensor& grad_out, Tensor& bias) {
  const int64_t n = grad_out.dim(0), c = grad_out.dim(1);
  const int64_t plane = grad_out.dim(2) * grad_out.dim(3);
  auto& gb = bias.grad();
#pragma omp parallel for schedule(static)
  for (int64_t ci = 0; ci < c; ++ci) {
    float acc = 0.0f;
    for (int64_t i = 0; i < n; ++i) {
      const float* src = grad_out.data() + (i * c + ci) * plane;
      for (int64_t p = 0; p < plane; ++p) acc += src[p];
    }
    gb[static_cast<size_t>(ci)] += acc;
  }
}

void accumulate(Tensor& param, const Tensor& grad) {
  auto& g = param.grad();
  for (int64_t i = 0; i < grad.numel(); ++i) {
    g[static_cast<size_t>(i)] += grad[i];
  }
}

Tensor reshape(const Tensor& t, std::vector<int64_t> shape) {
  return Tensor(std::move(shape), t.vec());
}

}  // namespace

Network::Network(ModelGraph& graph) : graph_(graph) {
  caches_.resize(graph_.layers.size());
}

Tensor Network::forward(const Tensor& input, bool train, MaskSet* masks,
                        const Tensor* soft_labels) {
  if (masks && !soft_labels) {
    throw_state("masked forward requires soft labels");
  }
  caches_.assign(graph_.layers.size(), LayerCache{});
  masks_ = masks;
  soft_ = soft_labels;
  have_train_caches_ = train;

  Tensor cur = input;
  for (size_t i = 0; i < graph_.layers.size(); ++i) {
    LayerSpec& layer = graph_.layers[i];
    LayerCache& cache = caches_[i];
    if (auto* conv = std::get_if<ConvSpec>(&layer)) {
      cache.input = cur;
      ClasswiseMask* mask =
          masks ? masks->find(static_cast<int>(i)) : nullptr;
      if (mask) {
        Tensor raw = conv2d_forward<float>(cur, conv->weight, nullptr,
                                           conv->stride, conv->padding);
        Tensor scale = aggregate_scale_t<float>(*soft_labels, mask->values);
        Tensor scaled = channel_scale_forward(raw, scale);
        if (!conv->bias.empty()) add_channel_bias(scaled, conv->bias);
        cache.conv_raw = std::move(raw);
        cache.scale = std::move(scale);
        cur = std::move(scaled);
      } else {
        cur = conv2d_forward<float>(cur, conv->weight,
                                    conv->bias.empty() ? nullptr : &conv->bias,
                                    conv->stride, conv->padding);
      }
    } else if (auto* lin = std::get_if<LinearSpec>(&layer)) {
      cache.input = cur;
      cur = linear_forward<float>(cur, lin->weight,
                                  lin->bias.empty() ? nullptr : &lin->bias);
    } else if (auto* bn = std::get_if<BatchNormSpec>(&layer)) {
      if (train) {
        cur = batchnorm2d_forward_train<float>(
            cur, bn->gamma, bn->beta, bn->running_mean, bn->running_var,
            bn->momentum, bn->eps, &cache.bn);
        ++bn->batches_seen;
      } else {
        if (bn->batches_seen == 0) {
          throw_state("layer " + std::to_string(i) +
                      ": eval-mode batchnorm before any statistics exist");
        }
        cur = batchnorm2d_forward_eval<float>(cur, bn->gamma, bn->beta,
                                              bn->running_mean,
                                              bn->running_var, bn->eps);
      }
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      cache.input = cur;
      cur = relu_forward(cur);
    } else if (auto* pool = std::get_if<MaxPoolSpec>(&layer)) {
      cache.in_shape = cur.shape();
      cur = maxpool2d_forward(cur, pool->k, pool->stride, &cache.argmax);
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
      cache.in_shape = cur.shape();
      cur = global_avgpool_forward(cur);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      cache.in_shape = cur.shape();
      cur = reshape(cur, {cur.dim(0), cur.numel() / cur.dim(0)});
    }
  }
  return cur;
}

void Network::backward(const Tensor& grad_logits) {
  if (!have_train_caches_) {
    throw_state("backward requires a preceding train-mode forward");
  }
  Tensor grad = grad_logits;
  for (int i = static_cast<int>(graph_.layers.size()) - 1; i >= 0; --i) {
    LayerSpec& layer = graph_.layers[static_cast<size_t>(i)];
    LayerCache& cache = caches_[static_cast<size_t>(i)];
    if (auto* conv = std::get_if<ConvSpec>(&layer)) {
      ClasswiseMask* mask = masks_ ? masks_->find(i) : nullptr;
      if (mask) {
        if (!conv->bias.empty()) accumulate_bias_grad(grad, conv->bias);
        Tensor grad_raw, grad_scale;
        channel_scale_backward(grad, cache.conv_raw, cache.scale, &grad_raw,
                               &grad_scale);
        aggregate_scale_backward_t<float>(grad_scale, *soft_, mask->values,
                                          &mask->values);
        auto grads = conv2d_backward<float>(grad_raw, cache.input,
                                            conv->weight, false, conv->stride,
                                            conv->padding);
        accumulate(conv->weight, grads.grad_weight);
        grad = std::move(grads.grad_input);
      } else {
        auto grads =
            conv2d_backward<float>(grad, cache.input, conv->weight,
                                   !conv->bias.empty(), conv->stride,
                                   conv->padding);
        accumulate(conv->weight, grads.grad_weight);
        if (!conv->bias.empty()) accumulate(conv->bias, grads.grad_bias);
        grad = std::move(grads.grad_input);
      }
    } else if (auto* lin = std::get_if<LinearSpec>(&layer)) {
      Tensor gx, gw, gb;
      linear_backward<float>(grad, cache.input, lin->weight, &gx, &gw,
                             lin->bias.empty() ? nullptr : &gb);
      accumulate(lin->weight, gw);
      if (!lin->bias.empty()) accumulate(lin->bias, gb);
      grad = std::move(gx);
    } else if (auto* bn = std::get_if<BatchNormSpec>(&layer)) {
      Tensor gx, ggamma, gbeta;
      batchnorm2d_backward<float>(grad, cache.bn, bn->gamma, &gx, &ggamma,
                                  &gbeta);
      accumulate(bn->gamma, ggamma);
      accumulate(bn->beta, gbeta);
      grad = std::move(gx);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      grad = relu_backward(grad, cache.input);
    } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
      grad = maxpool2d_backward(grad, cache.argmax, cache.in_shape);
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
      grad = global_avgpool_backward(grad, cache.in_shape);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      grad = reshape(grad, cache.in_shape);
    }
  }
}

void zero_param_grads(ModelGraph& graph) {
  for (const NamedParam& p : trainable_params(graph)) {
    p.tensor->zero_grad();
  }
}

ObjectiveResult total_objective(Network& net, const Tensor& images,
                                const Tensor& onehot_labels, MaskSet* masks,
                                const Tensor* soft_labels,
                                const SparsityConfig& sparsity,
                                bool backward) {
  ObjectiveResult result;
  Tensor logits = net.forward(images, /*train=*/true, masks, soft_labels);
  Tensor grad_logits;
  result.cross_entropy = static_cast<double>(softmax_cross_entropy<float>(
      logits, onehot_labels, backward ? &grad_logits : nullptr));
  if (backward) net.backward(grad_logits);
  if (masks && !masks->items.empty()) {
    result.penalty = sparsity_penalty(*masks, sparsity, backward);
  }
  result.total = result.cross_entropy + sparsity.lambda * result.penalty;
  return result;
}

}  // namespace whitebox
