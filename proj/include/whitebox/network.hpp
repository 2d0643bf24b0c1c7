#ifndef WHITEBOX_NETWORK_HPP_
#define WHITEBOX_NETWORK_HPP_

#include <vector>

#include "whitebox/graph.hpp"
#include "whitebox/kernels.hpp"
#include "whitebox/mask.hpp"

namespace whitebox {

// Executes a ModelGraph layer by layer. A forward pass caches whatever the
// matching backward pass needs; backward accumulates into the grad buffers
// of the graph parameters and, when masks are attached, of the masks.
//
// Masked conv layers compute
//   out = scale (.) conv_nobias(x, W) + bias
// where scale[i,c] aggregates the class-wise mask with the sample's soft
// labels. Scaling the conv output is exactly equivalent to scaling the
// output channels of W sample by sample, without materializing N weight
// copies. The bias is added after scaling.
class Network {
 public:
  explicit Network(ModelGraph& graph);

  // soft_labels are required whenever masks are given.
  Tensor forward(const Tensor& input, bool train, MaskSet* masks = nullptr,
                 const Tensor* soft_labels = nullptr);

  // Backward from d(loss)/d(logits); valid after a train-mode forward.
  void backward(const Tensor& grad_logits);

  ModelGraph& graph() { return graph_; }

 private:
  struct LayerCache {
    Tensor input;
    Tensor conv_raw;  // masked conv output before scaling
    Tensor scale;     // [N, C_out] aggregated mask scale
    std::vector<int64_t> argmax;
    std::vector<int64_t> in_shape;
    BatchNormCache<float> bn;
  };

  ModelGraph& graph_;
  std::vector<LayerCache> caches_;
  MaskSet* masks_ = nullptr;
  const Tensor* soft_ = nullptr;
  bool have_train_caches_ = false;
};

void zero_param_grads(ModelGraph& graph);

struct ObjectiveResult {
  double cross_entropy = 0.0;
  double penalty = 0.0;  // unscaled sum of column norms
  double total = 0.0;    // cross_entropy + lambda * penalty
};

// Masked cross-entropy plus the sparsity term; when backward is set, all
// parameter and mask gradients are populated (accumulated on top of
// whatever the buffers already hold).
ObjectiveResult total_objective(Network& net, const Tensor& images,
                                const Tensor& onehot_labels, MaskSet* masks,
                                const Tensor* soft_labels,
                                const SparsityConfig& sparsity, bool backward);

}  // namespace whitebox

#endif  // WHITEBOX_NETWORK_HPP_
