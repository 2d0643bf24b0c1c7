#include "whitebox/graph.hpp"

#include <cmath>

#include "whitebox/kernels.hpp"

namespace whitebox {

const char* layer_kind_name(const LayerSpec& layer) {
  struct Visitor {
    const char* operator()(const ConvSpec&) const { return "conv"; }
    const char* operator()(const LinearSpec&) const { return "linear"; }
    const char* operator()(const BatchNormSpec&) const { return "batchnorm"; }
    const char* operator()(const ReluSpec&) const { return "relu"; }
    const char* operator()(const MaxPoolSpec&) const { return "maxpool"; }
    const char* operator()(const GlobalAvgPoolSpec&) const { return "gap"; }
    const char* operator()(const FlattenSpec&) const { return "flatten"; }
  };
  return std::visit(Visitor{}, layer);
}

std::vector<int> ModelGraph::conv_layers() const {
  std::vector<int> idx;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<ConvSpec>(layers[i])) {
      idx.push_back(static_cast<int>(i));
    }
  }
  return idx;
}

int ModelGraph::linear_layer() const {
  for (size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<LinearSpec>(layers[i])) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::vector<ShapeInfo> validate_graph(const ModelGraph& graph) {
  if (graph.layers.empty()) throw_shape("model graph has no layers");
  std::vector<ShapeInfo> shapes;
  shapes.reserve(graph.layers.size());
  ShapeInfo cur;
  cur.spatial = true;
  cur.c = graph.input_channels;
  cur.h = graph.input_h;
  cur.w = graph.input_w;
  int linear_count = 0;

  for (size_t i = 0; i < graph.layers.size(); ++i) {
    const LayerSpec& layer = graph.layers[i];
    const std::string where =
        "layer " + std::to_string(i) + " (" + layer_kind_name(layer) + ")";
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      if (!cur.spatial) throw_shape(where + ": conv after flattening");
      if (conv->weight.rank() != 4) {
        throw_shape(where + ": weight " + conv->weight.shape_str());
      }
      if (conv->weight.dim(1) != cur.c) {
        throw_shape(where + ": expects C_in=" + std::to_string(cur.c) +
                    " but weight is " + conv->weight.shape_str());
      }
      const int64_t k = conv->weight.dim(2);
      cur.c = conv->weight.dim(0);
      cur.h = conv_out_dim(cur.h, k, conv->stride, conv->padding);
      cur.w = conv_out_dim(cur.w, k, conv->stride, conv->padding);
      if (cur.h < 1 || cur.w < 1) throw_shape(where + ": empty output map");
      if (!conv->bias.empty() && conv->bias.numel() != cur.c) {
        throw_shape(where + ": bias " + conv->bias.shape_str());
      }
    } else if (const auto* lin = std::get_if<LinearSpec>(&layer)) {
      const int64_t feat = cur.spatial ? cur.c * cur.h * cur.w : cur.features;
      if (lin->weight.rank() != 2 || lin->weight.dim(1) != feat) {
        throw_shape(where + ": expects D_in=" + std::to_string(feat) +
                    " but weight is " + lin->weight.shape_str());
      }
      cur.spatial = false;
      cur.features = lin->weight.dim(0);
      ++linear_count;
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&layer)) {
      if (!cur.spatial) throw_shape(where + ": batchnorm after flattening");
      if (bn->gamma.numel() != cur.c || bn->beta.numel() != cur.c ||
          bn->running_mean.numel() != cur.c ||
          bn->running_var.numel() != cur.c) {
        throw_shape(where + ": per-channel params do not match C=" +
                    std::to_string(cur.c));
      }
    } else if (const auto* pool = std::get_if<MaxPoolSpec>(&layer)) {
      if (!cur.spatial) throw_shape(where + ": maxpool after flattening");
      cur.h = (cur.h - pool->k) / pool->stride + 1;
      cur.w = (cur.w - pool->k) / pool->stride + 1;
      if (cur.h < 1 || cur.w < 1) throw_shape(where + ": empty output map");
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
      if (!cur.spatial) throw_shape(where + ": gap after flattening");
      cur.spatial = false;
      cur.features = cur.c;
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      if (!cur.spatial) throw_shape(where + ": flatten after flattening");
      cur.spatial = false;
      cur.features = cur.c * cur.h * cur.w;
    }
    shapes.push_back(cur);
  }

  if (linear_count != 1) {
    throw_shape("graph must contain exactly one linear head, found " +
                std::to_string(linear_count));
  }
  const int head = graph.linear_layer();
  const auto& head_spec = std::get<LinearSpec>(graph.layers[head]);
  if (head_spec.weight.dim(0) != graph.class_count) {
    throw_shape("classification head width " +
                std::to_string(head_spec.weight.dim(0)) +
                " does not equal class count " +
                std::to_string(graph.class_count));
  }
  if (head != static_cast<int>(graph.layers.size()) - 1) {
    throw_shape("linear head must be the final layer");
  }
  return shapes;
}

std::vector<NamedParam> trainable_params(ModelGraph& graph) {
  std::vector<NamedParam> params;
  for (size_t i = 0; i < graph.layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (auto* conv = std::get_if<ConvSpec>(&graph.layers[i])) {
      params.push_back({prefix + "weight", &conv->weight});
      if (!conv->bias.empty()) params.push_back({prefix + "bias", &conv->bias});
    } else if (auto* lin = std::get_if<LinearSpec>(&graph.layers[i])) {
      params.push_back({prefix + "weight", &lin->weight});
      if (!lin->bias.empty()) params.push_back({prefix + "bias", &lin->bias});
    } else if (auto* bn = std::get_if<BatchNormSpec>(&graph.layers[i])) {
      params.push_back({prefix + "gamma", &bn->gamma});
      params.push_back({prefix + "beta", &bn->beta});
    }
  }
  return params;
}

Checkpoint graph_state(const ModelGraph& graph) {
  Checkpoint ckpt;
  for (size_t i = 0; i < graph.layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (const auto* conv = std::get_if<ConvSpec>(&graph.layers[i])) {
      ckpt.add(prefix + "weight", conv->weight);
      if (!conv->bias.empty()) ckpt.add(prefix + "bias", conv->bias);
    } else if (const auto* lin = std::get_if<LinearSpec>(&graph.layers[i])) {
      ckpt.add(prefix + "weight", lin->weight);
      if (!lin->bias.empty()) ckpt.add(prefix + "bias", lin->bias);
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&graph.layers[i])) {
      ckpt.add(prefix + "gamma", bn->gamma);
      ckpt.add(prefix + "beta", bn->beta);
      ckpt.add(prefix + "running_mean", bn->running_mean);
      ckpt.add(prefix + "running_var", bn->running_var);
      Tensor count({1});
      count[0] = static_cast<float>(bn->batches_seen);
      ckpt.add(prefix + "batches_seen", count);
    }
  }
  return ckpt;
}

void load_graph_state(ModelGraph& graph, const Checkpoint& ckpt) {
  auto fetch = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw_data("checkpoint missing tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      throw_shape("checkpoint tensor '" + name + "' has shape " +
                  src->shape_str() + ", graph expects " + dst.shape_str());
    }
    dst = *src;
  };
  for (const NamedParam& p : trainable_params(graph)) {
    fetch(p.name, *p.tensor);
  }
  for (size_t i = 0; i < graph.layers.size(); ++i) {
    if (auto* bn = std::get_if<BatchNormSpec>(&graph.layers[i])) {
      const std::string prefix = "layer" + std::to_string(i) + ".";
      fetch(prefix + "running_mean", bn->running_mean);
      fetch(prefix + "running_var", bn->running_var);
      const Tensor* count = ckpt.find(prefix + "batches_seen");
      if (!count) throw_data("checkpoint missing '" + prefix + "batches_seen'");
      bn->batches_seen = static_cast<int64_t>((*count)[0]);
    }
  }
}

void init_weights(ModelGraph& graph, RandomStream& rng) {
  for (LayerSpec& layer : graph.layers) {
    if (auto* conv = std::get_if<ConvSpec>(&layer)) {
      const int64_t fan_in =
          conv->weight.dim(1) * conv->weight.dim(2) * conv->weight.dim(3);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < conv->weight.numel(); ++i) {
        conv->weight[i] = static_cast<float>(rng.normal(0.0, std));
      }
      conv->bias.fill(0.0f);
    } else if (auto* lin = std::get_if<LinearSpec>(&layer)) {
      const double std = std::sqrt(2.0 / static_cast<double>(lin->weight.dim(1)));
      for (int64_t i = 0; i < lin->weight.numel(); ++i) {
        lin->weight[i] = static_cast<float>(rng.normal(0.0, std));
      }
      lin->bias.fill(0.0f);
    } else if (auto* bn = std::get_if<BatchNormSpec>(&layer)) {
      bn->gamma.fill(1.0f);
      bn->beta.fill(0.0f);
      bn->running_mean.fill(0.0f);
      bn->running_var.fill(1.0f);
      bn->batches_seen = 0;
    }
  }
}

ModelGraph build_cnn(const std::vector<int64_t>& widths, int64_t in_channels,
                     int64_t in_h, int64_t in_w, int64_t class_count,
                     HeadKind head) {
  if (widths.empty()) throw_config("build_cnn: need at least one conv width");
  ModelGraph graph;
  graph.input_channels = in_channels;
  graph.input_h = in_h;
  graph.input_w = in_w;
  graph.class_count = class_count;

  int64_t c = in_channels, h = in_h, w = in_w;
  for (size_t b = 0; b < widths.size(); ++b) {
    ConvSpec conv;
    conv.weight = Tensor({widths[b], c, 3, 3});
    conv.stride = 1;
    conv.padding = 1;
    graph.layers.emplace_back(std::move(conv));
    c = widths[b];

    BatchNormSpec bn;
    bn.gamma = Tensor({c});
    bn.beta = Tensor({c});
    bn.running_mean = Tensor({c});
    bn.running_var = Tensor({c});
    graph.layers.emplace_back(std::move(bn));
    graph.layers.emplace_back(ReluSpec{});

    const bool last = (b + 1 == widths.size());
    if (!last && h >= 4 && w >= 4) {
      graph.layers.emplace_back(MaxPoolSpec{2, 2});
      h /= 2;
      w /= 2;
    }
  }

  int64_t feat;
  if (head == HeadKind::kGlobalAvgPool) {
    graph.layers.emplace_back(GlobalAvgPoolSpec{});
    feat = c;
  } else {
    graph.layers.emplace_back(FlattenSpec{});
    feat = c * h * w;
  }
  LinearSpec lin;
  lin.weight = Tensor({class_count, feat});
  lin.bias = Tensor({class_count});
  graph.layers.emplace_back(std::move(lin));
  return graph;
}

}  // namespace whitebox
