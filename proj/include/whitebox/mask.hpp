#ifndef WHITEBOX_MASK_HPP_
#define WHITEBOX_MASK_HPP_

#include <ostream>
#include <string>
#include <vector>

#include "whitebox/graph.hpp"
#include "whitebox/rng.hpp"
#include "whitebox/tensor.hpp"

namespace whitebox {

// Per-layer class-wise mask: values[d, c] measures how much output
// channel c of conv layer `layer_id` contributes to recognizing class d.
// In the shared-mask ablation the class dimension collapses to 1.
struct ClasswiseMask {
  int layer_id = -1;
  Tensor values;  // [D, C_out], initialized to ones
};

struct MaskSet {
  std::vector<ClasswiseMask> items;
  bool classwise = true;  // false: single shared mask row per channel

  ClasswiseMask* find(int layer_id);
  const ClasswiseMask* find(int layer_id) const;
};

// One mask per conv layer (the linear classifier head carries none),
// initialized to all ones. class_dim is D, or 1 for the shared ablation.
MaskSet init_masks(const ModelGraph& graph, int64_t class_dim);

// Soft label batch: ground-truth entries stay exactly 1, every other
// entry is an independent draw from Normal(mu, sigma).
struct SoftLabelBatch {
  Tensor values;  // [N, D]
  double mu = 0.5;
  double sigma = 1.0;
  uint64_t rng_seed = 0;
};

SoftLabelBatch soften_labels(const Tensor& onehot_labels, double mu,
                             double sigma, RandomStream& rng);

// scale[i, c] = sum_d soft[i, d] * mask[d, c]. With a shared mask
// (1 row) the labels drop out and scale[i, c] = mask[0, c].
template <typename T>
TensorT<T> aggregate_scale_t(const TensorT<T>& soft,
                             const TensorT<T>& mask_values);

Tensor aggregate_scale(const SoftLabelBatch& soft, const ClasswiseMask& mask);

// Accumulates d(loss)/d(mask) given the gradient w.r.t. the aggregated
// scale; the soft labels are constants.
template <typename T>
void aggregate_scale_backward_t(const TensorT<T>& grad_scale,
                                const TensorT<T>& soft,
                                const TensorT<T>& mask_values,
                                TensorT<T>* grad_mask_accum);

// Channel-column sparsity penalty over a single mask tensor [D, C]:
// group kind sums ||values[:, c]||_2 over channels, l1 sums |values|.
// When grad_accum is non-null the (sub)gradient scaled by lambda_scale
// is accumulated into it; a zero column contributes zero gradient.
enum class NormKind { kL2Group, kL1 };

template <typename T>
double mask_penalty_t(const TensorT<T>& values, NormKind kind,
                      double lambda_scale, TensorT<T>* grad_accum);

struct SparsityConfig {
  double lambda = 0.0;
  NormKind norm_kind = NormKind::kL2Group;
};

// Total penalty over all masks; with accumulate_grads, lambda * d(penalty)
// is added to each mask's gradient buffer.
double sparsity_penalty(MaskSet& masks, const SparsityConfig& config,
                        bool accumulate_grads);
double sparsity_penalty(const MaskSet& masks, const SparsityConfig& config);

void zero_mask_grads(MaskSet& masks);

// One row per class, one column per channel; raw values.
void write_mask_csv(const ClasswiseMask& mask, std::ostream& os);

}  // namespace whitebox

#endif  // WHITEBOX_MASK_HPP_
