#ifndef WHITEBOX_GRAPH_HPP_
#define WHITEBOX_GRAPH_HPP_

#include <string>
#include <variant>
#include <vector>

#include "whitebox/checkpoint.hpp"
#include "whitebox/rng.hpp"
#include "whitebox/tensor.hpp"

namespace whitebox {

struct ConvSpec {
  Tensor weight;  // [C_out, C_in, K, K]
  Tensor bias;    // empty when the layer has no bias
  int stride = 1;
  int padding = 0;
};

struct LinearSpec {
  Tensor weight;  // [D_out, D_in]
  Tensor bias;
};

struct BatchNormSpec {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float momentum = 0.1f;
  float eps = 1e-5f;
  int64_t batches_seen = 0;  // eval mode requires at least one train batch
};

struct ReluSpec {};

struct MaxPoolSpec {
  int k = 2;
  int stride = 2;
};

struct GlobalAvgPoolSpec {};

struct FlattenSpec {};

using LayerSpec = std::variant<ConvSpec, LinearSpec, BatchNormSpec, ReluSpec,
                               MaxPoolSpec, GlobalAvgPoolSpec, FlattenSpec>;

const char* layer_kind_name(const LayerSpec& layer);

// Output shape of each layer during propagation: spatial [C,H,W] until a
// Flatten/GlobalAvgPool collapses it to a flat feature vector.
struct ShapeInfo {
  bool spatial = true;
  int64_t c = 0, h = 0, w = 0;
  int64_t features = 0;  // valid when !spatial
};

// Ordered layer list of a sequential CNN plus the input/label geometry.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  int64_t input_channels = 3;
  int64_t input_h = 32;
  int64_t input_w = 32;
  int64_t class_count = 10;

  std::vector<int> conv_layers() const;  // indices of conv layers, in order
  int linear_layer() const;              // index of the classification head
};

// Shape-propagates the graph and enforces the structural invariants:
// compatible adjacent channel counts, L >= 1, and exactly one linear
// classification head of width class_count at the end.
std::vector<ShapeInfo> validate_graph(const ModelGraph& graph);

struct NamedParam {
  std::string name;
  Tensor* tensor;
  bool is_mask = false;  // masks are excluded from weight decay
};

// Trainable parameters (conv/linear weights+biases, batchnorm affine).
std::vector<NamedParam> trainable_params(ModelGraph& graph);

// Everything a checkpoint must carry to restore the graph state,
// including batchnorm running statistics.
Checkpoint graph_state(const ModelGraph& graph);
void load_graph_state(ModelGraph& graph, const Checkpoint& ckpt);

// Kaiming-style init: weights ~ N(0, sqrt(2/fan_in)), biases zero,
// batchnorm gamma=1 beta=0, running stats reset.
void init_weights(ModelGraph& graph, RandomStream& rng);

// Builders for the plain conv backbones used throughout: a stack of
// conv(3x3, pad 1, no bias) + batchnorm + relu blocks, maxpool(2,2)
// between blocks, then either global average pooling or flattening in
// front of the linear head.
enum class HeadKind { kGlobalAvgPool, kFlatten };

ModelGraph build_cnn(const std::vector<int64_t>& widths, int64_t in_channels,
                     int64_t in_h, int64_t in_w, int64_t class_count,
                     HeadKind head = HeadKind::kGlobalAvgPool);

}  // namespace whitebox

#endif  // WHITEBOX_GRAPH_HPP_
