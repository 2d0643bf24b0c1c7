#include "whitebox/mask.hpp"

#include <cmath>

namespace whitebox {

ClasswiseMask* MaskSet::find(int layer_id) {
  for (auto& m : items) {
    if (m.layer_id == layer_id) return &m;
  }
  return nullptr;
}

const ClasswiseMask* MaskSet::find(int layer_id) const {
  for (const auto& m : items) {
    if (m.layer_id == layer_id) return &m;
  }
  return nullptr;
}

MaskSet init_masks(const ModelGraph& graph, int64_t class_dim) {
  if (class_dim < 1) throw_config("mask class dimension must be >= 1");
  MaskSet set;
  set.classwise = class_dim > 1;
  for (int idx : graph.conv_layers()) {
    const auto& conv = std::get<ConvSpec>(graph.layers[idx]);
    ClasswiseMask m;
    m.layer_id = idx;
    m.values = Tensor({class_dim, conv.weight.dim(0)});
    m.values.fill(1.0f);
    set.items.push_back(std::move(m));
  }
  return set;
}

SoftLabelBatch soften_labels(const Tensor& onehot_labels, double mu,
                             double sigma, RandomStream& rng) {
  if (onehot_labels.rank() != 2) {
    throw_shape("soften_labels: labels must be [N,D], got " +
                onehot_labels.shape_str());
  }
  if (sigma < 0.0) throw_config("soften_labels: sigma must be >= 0");
  const int64_t n = onehot_labels.dim(0), d = onehot_labels.dim(1);
  SoftLabelBatch soft;
  soft.mu = mu;
  soft.sigma = sigma;
  soft.values = Tensor({n, d});
  for (int64_t i = 0; i < n; ++i) {
    int64_t truth = -1;
    for (int64_t j = 0; j < d; ++j) {
      const float v = onehot_labels[i * d + j];
      if (v == 1.0f) {
        truth = (truth == -1) ? j : -2;
      } else if (v != 0.0f) {
        truth = -2;
        break;
      }
    }
    if (truth < 0) {
      throw_data("soften_labels: row " + std::to_string(i) +
                 " is not one-hot");
    }
    for (int64_t j = 0; j < d; ++j) {
      soft.values[i * d + j] =
          (j == truth) ? 1.0f : static_cast<float>(rng.normal(mu, sigma));
    }
  }
  return soft;
}

template <typename T>
TensorT<T> aggregate_scale_t(const TensorT<T>& soft,
                             const TensorT<T>& mask_values) {
  const int64_t n = soft.dim(0), d = soft.dim(1);
  const int64_t d_mask = mask_values.dim(0), c = mask_values.dim(1);
  TensorT<T> scale({n, c});
  if (d_mask == 1) {
    // shared mask: label-independent per-channel scale
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t ci = 0; ci < c; ++ci) scale[i * c + ci] = mask_values[ci];
    }
    return scale;
  }
  if (d_mask != d) {
    throw_shape("aggregate_scale: soft labels " + soft.shape_str() +
                " vs mask " + mask_values.shape_str());
  }
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t di = 0; di < d; ++di) {
      const T y = soft[i * d + di];
      const T* mrow = mask_values.data() + di * c;
      T* srow = scale.data() + i * c;
      for (int64_t ci = 0; ci < c; ++ci) srow[ci] += y * mrow[ci];
    }
  }
  return scale;
}

Tensor aggregate_scale(const SoftLabelBatch& soft, const ClasswiseMask& mask) {
  return aggregate_scale_t(soft.values, mask.values);
}

template <typename T>
void aggregate_scale_backward_t(const TensorT<T>& grad_scale,
                                const TensorT<T>& soft,
                                const TensorT<T>& mask_values,
                                TensorT<T>* grad_mask_accum) {
  const int64_t n = soft.dim(0), d = soft.dim(1);
  const int64_t d_mask = mask_values.dim(0), c = mask_values.dim(1);
  auto& gm = grad_mask_accum->grad();
  if (d_mask == 1) {
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t ci = 0; ci < c; ++ci) {
        gm[static_cast<size_t>(ci)] += grad_scale[i * c + ci];
      }
    }
    return;
  }
  if (d_mask != d) {
    throw_shape("aggregate_scale_backward: soft labels " + soft.shape_str() +
                " vs mask " + mask_values.shape_str());
  }
  for (int64_t di = 0; di < d; ++di) {
    for (int64_t i = 0; i < n; ++i) {
      const T y = soft[i * d + di];
      const T* gs = grad_scale.data() + i * c;
      for (int64_t ci = 0; ci < c; ++ci) {
        gm[static_cast<size_t>(di * c + ci)] += y * gs[ci];
      }
    }
  }
}

template <typename T>
double mask_penalty_t(const TensorT<T>& values, NormKind kind,
                      double lambda_scale, TensorT<T>* grad_accum) {
  const int64_t d = values.dim(0), c = values.dim(1);
  double penalty = 0.0;
  if (kind == NormKind::kL1) {
    for (int64_t i = 0; i < values.numel(); ++i) {
      penalty += std::abs(static_cast<double>(values[i]));
      if (grad_accum) {
        const T v = values[i];
        const T s = v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
        grad_accum->grad()[static_cast<size_t>(i)] +=
            static_cast<T>(lambda_scale) * s;
      }
    }
    return penalty;
  }
  // l2 group norm per channel column; subgradient at an exactly-zero
  // column is zero.
  for (int64_t ci = 0; ci < c; ++ci) {
    double norm_sq = 0.0;
    for (int64_t di = 0; di < d; ++di) {
      const double v = static_cast<double>(values[di * c + ci]);
      norm_sq += v * v;
    }
    const double norm = std::sqrt(norm_sq);
    penalty += norm;
    if (grad_accum && norm > 0.0) {
      for (int64_t di = 0; di < d; ++di) {
        grad_accum->grad()[static_cast<size_t>(di * c + ci)] += static_cast<T>(
            lambda_scale * static_cast<double>(values[di * c + ci]) / norm);
      }
    }
  }
  return penalty;
}

double sparsity_penalty(MaskSet& masks, const SparsityConfig& config,
                        bool accumulate_grads) {
  if (masks.items.empty()) {
    throw_state("sparsity_penalty: no masked layers");
  }
  double total = 0.0;
  for (auto& m : masks.items) {
    total += mask_penalty_t<float>(m.values, config.norm_kind, config.lambda,
                                   accumulate_grads ? &m.values : nullptr);
  }
  return total;
}

double sparsity_penalty(const MaskSet& masks, const SparsityConfig& config) {
  return sparsity_penalty(const_cast<MaskSet&>(masks), config, false);
}

void zero_mask_grads(MaskSet& masks) {
  for (auto& m : masks.items) m.values.zero_grad();
}

void write_mask_csv(const ClasswiseMask& mask, std::ostream& os) {
  const int64_t d = mask.values.dim(0), c = mask.values.dim(1);
  for (int64_t di = 0; di < d; ++di) {
    for (int64_t ci = 0; ci < c; ++ci) {
      if (ci) os << ",";
      os << mask.values[di * c + ci];
    }
    os << "\n";
  }
}

template TensorT<float> aggregate_scale_t<float>(const TensorT<float>&,
                                                 const TensorT<float>&);
template TensorT<double> aggregate_scale_t<double>(const TensorT<double>&,
                                                   const TensorT<double>&);
template void aggregate_scale_backward_t<float>(const TensorT<float>&,
                                                const TensorT<float>&,
                                                const TensorT<float>&,
                                                TensorT<float>*);
template void aggregate_scale_backward_t<double>(const TensorT<double>&,
                                                 const TensorT<double>&,
                                                 const TensorT<double>&,
                                                 TensorT<double>*);
template double mask_penalty_t<float>(const TensorT<float>&, NormKind, double,
                                      TensorT<float>*);
template double mask_penalty_t<double>(const TensorT<double>&, NormKind,
                                       double, TensorT<double>*);

}  // namespace whitebox
