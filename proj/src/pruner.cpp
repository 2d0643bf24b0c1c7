#include "whitebox/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "whitebox/kernels.hpp"

namespace whitebox {

const char* score_kind_name(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kAbsSum: return "abs_sum";
    case ScoreKind::kSignedSum: return "signed_sum";
    case ScoreKind::kL2Norm: return "l2_norm";
  }
  return "abs_sum";
}

ScoreKind score_kind_from_name(const std::string& name) {
  if (name == "abs_sum") return ScoreKind::kAbsSum;
  if (name == "signed_sum") return ScoreKind::kSignedSum;
  if (name == "l2_norm") return ScoreKind::kL2Norm;
  throw_config("unknown score kind '" + name + "'");
}

ChannelScoreTable channel_scores(const MaskSet& masks, ScoreKind kind) {
  if (masks.items.empty()) {
    throw_state("channel_scores: no trained masks");
  }
  ChannelScoreTable table;
  table.kind = kind;
  for (const auto& m : masks.items) {
    const int64_t d = m.values.dim(0), c = m.values.dim(1);
    std::vector<double> s(static_cast<size_t>(c), 0.0);
    for (int64_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int64_t di = 0; di < d; ++di) {
        const double v = static_cast<double>(m.values[di * c + ci]);
        switch (kind) {
          case ScoreKind::kAbsSum: acc += std::abs(v); break;
          case ScoreKind::kSignedSum: acc += v; break;
          case ScoreKind::kL2Norm: acc += v * v; break;
        }
      }
      s[static_cast<size_t>(ci)] =
          kind == ScoreKind::kL2Norm ? std::sqrt(acc) : acc;
    }
    table.layer_ids.push_back(m.layer_id);
    table.scores.push_back(std::move(s));
  }
  return table;
}

// ---------------------------------------------------------------------------
// FLOPs model
// ---------------------------------------------------------------------------

FlopsModel FlopsModel::from_graph(const ModelGraph& graph) {
  validate_graph(graph);
  FlopsModel model;
  int64_t h = graph.input_h, w = graph.input_w;
  int last_conv = -1;           // conv order index of the current producer
  int64_t cur_channels = graph.input_channels;
  bool flattened = false;
  int64_t flatten_mult = 1;

  for (const LayerSpec& layer : graph.layers) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      const int64_t k = conv->weight.dim(2);
      h = conv_out_dim(h, k, conv->stride, conv->padding);
      w = conv_out_dim(w, k, conv->stride, conv->padding);
      ConvTerm term;
      term.k2 = k * k;
      term.out_hw = h * w;
      term.full_out = conv->weight.dim(0);
      term.producer = last_conv;
      term.fixed_cin = cur_channels;
      last_conv = static_cast<int>(model.conv_terms_.size());
      model.conv_terms_.push_back(term);
      cur_channels = term.full_out;
    } else if (const auto* pool = std::get_if<MaxPoolSpec>(&layer)) {
      h = (h - pool->k) / pool->stride + 1;
      w = (w - pool->k) / pool->stride + 1;
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
      flattened = true;
      flatten_mult = 1;
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      flattened = true;
      flatten_mult = h * w;
    } else if (const auto* lin = std::get_if<LinearSpec>(&layer)) {
      model.linear_.present = true;
      model.linear_.d_out = lin->weight.dim(0);
      model.linear_.producer = last_conv;
      model.linear_.mult = flattened ? flatten_mult : 1;
      model.linear_.fixed_din = lin->weight.dim(1);
    }
  }
  return model;
}

uint64_t FlopsModel::conv_term(int conv_idx,
                               const std::vector<int64_t>& kept_counts) const {
  const ConvTerm& t = conv_terms_[static_cast<size_t>(conv_idx)];
  const int64_t out = kept_counts.empty()
                          ? t.full_out
                          : kept_counts[static_cast<size_t>(conv_idx)];
  const int64_t cin =
      t.producer < 0
          ? t.fixed_cin
          : (kept_counts.empty() ? conv_terms_[static_cast<size_t>(t.producer)]
                                       .full_out
                                 : kept_counts[static_cast<size_t>(t.producer)]);
  return static_cast<uint64_t>(t.k2) * static_cast<uint64_t>(cin) *
         static_cast<uint64_t>(out) * static_cast<uint64_t>(t.out_hw);
}

uint64_t FlopsModel::total(const std::vector<int64_t>& kept_counts) const {
  if (!kept_counts.empty() && kept_counts.size() != conv_terms_.size()) {
    throw_shape("model_flops: kept counts size " +
                std::to_string(kept_counts.size()) + " vs " +
                std::to_string(conv_terms_.size()) + " conv layers");
  }
  for (size_t i = 0; i < kept_counts.size(); ++i) {
    if (kept_counts[i] < 0 || kept_counts[i] > conv_terms_[i].full_out) {
      throw_shape("model_flops: kept count " + std::to_string(kept_counts[i]) +
                  " out of range for conv " + std::to_string(i));
    }
  }
  uint64_t total = 0;
  for (int i = 0; i < conv_count(); ++i) total += conv_term(i, kept_counts);
  if (linear_.present) {
    int64_t din;
    if (linear_.producer < 0) {
      din = linear_.fixed_din;
    } else {
      const int64_t c =
          kept_counts.empty()
              ? conv_terms_[static_cast<size_t>(linear_.producer)].full_out
              : kept_counts[static_cast<size_t>(linear_.producer)];
      din = c * linear_.mult;
    }
    total += static_cast<uint64_t>(din) * static_cast<uint64_t>(linear_.d_out);
  }
  return total;
}

uint64_t FlopsModel::total_full() const { return total({}); }

uint64_t FlopsModel::removal_delta(
    int conv_idx, const std::vector<int64_t>& kept_counts) const {
  const ConvTerm& t = conv_terms_[static_cast<size_t>(conv_idx)];
  const int64_t cin =
      t.producer < 0 ? t.fixed_cin
                     : kept_counts[static_cast<size_t>(t.producer)];
  uint64_t delta = static_cast<uint64_t>(t.k2) * static_cast<uint64_t>(cin) *
                   static_cast<uint64_t>(t.out_hw);
  for (size_t j = 0; j < conv_terms_.size(); ++j) {
    if (conv_terms_[j].producer == conv_idx) {
      delta += static_cast<uint64_t>(conv_terms_[j].k2) *
               static_cast<uint64_t>(kept_counts[j]) *
               static_cast<uint64_t>(conv_terms_[j].out_hw);
    }
  }
  if (linear_.present && linear_.producer == conv_idx) {
    delta += static_cast<uint64_t>(linear_.mult) *
             static_cast<uint64_t>(linear_.d_out);
  }
  return delta;
}

uint64_t model_flops(const ModelGraph& graph,
                     const std::vector<int64_t>& kept_counts) {
  return FlopsModel::from_graph(graph).total(kept_counts);
}

// ---------------------------------------------------------------------------
// global voting
// ---------------------------------------------------------------------------

PruningPlan global_vote(const ChannelScoreTable& scores,
                        const ModelGraph& graph, const FlopsModel& flops,
                        double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) {
    throw_config("global_vote: alpha must lie in [0, 1), got " +
                 std::to_string(alpha));
  }
  const std::vector<int> conv_ids = graph.conv_layers();
  if (scores.layer_ids != conv_ids) {
    throw_shape("global_vote: score table does not cover the graph's conv "
                "layers exactly once");
  }
  if (static_cast<int>(scores.scores.size()) != flops.conv_count()) {
    throw_shape("global_vote: score table vs FLOPs model layer count");
  }
  for (int l = 0; l < flops.conv_count(); ++l) {
    if (static_cast<int64_t>(scores.scores[static_cast<size_t>(l)].size()) !=
        flops.conv_channels(l)) {
      throw_shape("global_vote: score vector length mismatch at conv " +
                  std::to_string(l));
    }
  }

  struct Entry {
    double score;
    int layer;  // conv order index
    int64_t channel;
  };
  std::vector<Entry> entries;
  for (size_t l = 0; l < scores.scores.size(); ++l) {
    for (size_t c = 0; c < scores.scores[l].size(); ++c) {
      entries.push_back({scores.scores[l][c], static_cast<int>(l),
                         static_cast<int64_t>(c)});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.channel < b.channel;
  });

  std::vector<int64_t> kept_counts(static_cast<size_t>(flops.conv_count()));
  std::vector<std::vector<bool>> removed(kept_counts.size());
  for (int l = 0; l < flops.conv_count(); ++l) {
    kept_counts[static_cast<size_t>(l)] = flops.conv_channels(l);
    removed[static_cast<size_t>(l)].assign(
        static_cast<size_t>(flops.conv_channels(l)), false);
  }

  const uint64_t baseline = flops.total_full();
  uint64_t current = baseline;
  double achieved = 0.0;

  PruningPlan plan;
  plan.target_rate = alpha;
  plan.score_kind = scores.kind;
  plan.baseline_flops = baseline;

  for (const Entry& e : entries) {
    if (achieved >= alpha) break;
    if (kept_counts[static_cast<size_t>(e.layer)] <= 1) continue;
    current -= flops.removal_delta(e.layer, kept_counts);
    --kept_counts[static_cast<size_t>(e.layer)];
    removed[static_cast<size_t>(e.layer)][static_cast<size_t>(e.channel)] =
        true;
    plan.removal_order.emplace_back(e.layer, e.channel);
    achieved =
        1.0 - static_cast<double>(current) / static_cast<double>(baseline);
  }
  if (achieved < alpha) {
    std::ostringstream os;
    os << "global_vote: target rate " << alpha
       << " unreachable under the keep-one-channel constraint; maximum "
          "achievable rate is "
       << achieved;
    throw_config(os.str());
  }

  plan.achieved_rate = achieved;
  plan.pruned_flops = current;
  for (size_t l = 0; l < kept_counts.size(); ++l) {
    std::vector<int64_t> kept;
    for (size_t c = 0; c < removed[l].size(); ++c) {
      if (!removed[l][c]) kept.push_back(static_cast<int64_t>(c));
    }
    plan.layer_ids.push_back(conv_ids[l]);
    plan.kept.push_back(std::move(kept));
    plan.original.push_back(static_cast<int64_t>(removed[l].size()));
    plan.layer_flops_before.push_back(
        flops.conv_term(static_cast<int>(l), {}));
    plan.layer_flops_after.push_back(
        flops.conv_term(static_cast<int>(l), kept_counts));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// mask folding
// ---------------------------------------------------------------------------

Tensor slice_mask_columns(const Tensor& mask_values,
                          const std::vector<int64_t>& kept) {
  const int64_t d = mask_values.dim(0), c = mask_values.dim(1);
  Tensor out({d, static_cast<int64_t>(kept.size())});
  for (int64_t di = 0; di < d; ++di) {
    for (size_t j = 0; j < kept.size(); ++j) {
      if (kept[j] < 0 || kept[j] >= c) {
        throw_shape("slice_mask_columns: channel " + std::to_string(kept[j]) +
                    " out of range [0," + std::to_string(c) + ")");
      }
      out[di * static_cast<int64_t>(kept.size()) + static_cast<int64_t>(j)] =
          mask_values[di * c + kept[j]];
    }
  }
  return out;
}

void fold_mask(Tensor& weight, Tensor& bias, const Tensor& mask_kept,
               double mu) {
  if (mask_kept.rank() != 2 || mask_kept.dim(1) != weight.dim(0)) {
    throw_shape("fold_mask: mask " + mask_kept.shape_str() +
                " does not match weight " + weight.shape_str());
  }
  const int64_t d = mask_kept.dim(0), c_out = weight.dim(0);
  const int64_t per_channel = weight.numel() / c_out;
  for (int64_t c = 0; c < c_out; ++c) {
    double sum = 0.0;
    for (int64_t di = 0; di < d; ++di) {
      sum += static_cast<double>(mask_kept[di * c_out + c]);
    }
    const float scalar = static_cast<float>(mu * sum);
    float* w = weight.data() + c * per_channel;
    for (int64_t i = 0; i < per_channel; ++i) w[i] *= scalar;
    if (!bias.empty()) bias[c] *= scalar;
  }
}

// ---------------------------------------------------------------------------
// surgery
// ---------------------------------------------------------------------------

namespace {

Tensor slice_dim0(const Tensor& t, const std::vector<int64_t>& keep) {
  std::vector<int64_t> shape = t.shape();
  const int64_t stride = t.numel() / shape[0];
  shape[0] = static_cast<int64_t>(keep.size());
  Tensor out(shape);
  for (size_t i = 0; i < keep.size(); ++i) {
    const float* src = t.data() + keep[i] * stride;
    float* dst = out.data() + static_cast<int64_t>(i) * stride;
    std::copy(src, src + stride, dst);
  }
  return out;
}

// Slice dim 1 of a rank-4 conv weight [C_out, C_in, K, K].
Tensor slice_conv_in(const Tensor& t, const std::vector<int64_t>& keep) {
  const int64_t c_out = t.dim(0), c_in = t.dim(1);
  const int64_t kk = t.dim(2) * t.dim(3);
  Tensor out({c_out, static_cast<int64_t>(keep.size()), t.dim(2), t.dim(3)});
  for (int64_t co = 0; co < c_out; ++co) {
    for (size_t j = 0; j < keep.size(); ++j) {
      const float* src = t.data() + (co * c_in + keep[j]) * kk;
      float* dst =
          out.data() + (co * static_cast<int64_t>(keep.size()) +
                        static_cast<int64_t>(j)) *
                           kk;
      std::copy(src, src + kk, dst);
    }
  }
  return out;
}

// Slice columns of a linear weight [D_out, D_in].
Tensor slice_linear_in(const Tensor& t, const std::vector<int64_t>& keep) {
  const int64_t d_out = t.dim(0), d_in = t.dim(1);
  Tensor out({d_out, static_cast<int64_t>(keep.size())});
  for (int64_t o = 0; o < d_out; ++o) {
    for (size_t j = 0; j < keep.size(); ++j) {
      out[o * static_cast<int64_t>(keep.size()) + static_cast<int64_t>(j)] =
          t[o * d_in + keep[j]];
    }
  }
  return out;
}

void validate_plan(const ModelGraph& graph, const PruningPlan& plan) {
  const std::vector<int> conv_ids = graph.conv_layers();
  if (plan.layer_ids != conv_ids) {
    throw_shape("apply_plan: plan layers do not match the graph's convs");
  }
  for (size_t l = 0; l < plan.kept.size(); ++l) {
    const auto& conv = std::get<ConvSpec>(graph.layers[conv_ids[l]]);
    const int64_t c_out = conv.weight.dim(0);
    if (plan.original[l] != c_out) {
      throw_shape("apply_plan: layer " + std::to_string(conv_ids[l]) +
                  " has " + std::to_string(c_out) + " channels, plan says " +
                  std::to_string(plan.original[l]));
    }
    if (plan.kept[l].empty()) {
      throw_shape("apply_plan: plan empties layer " +
                  std::to_string(conv_ids[l]));
    }
    int64_t prev = -1;
    for (int64_t c : plan.kept[l]) {
      if (c <= prev || c >= c_out) {
        throw_shape("apply_plan: bad kept channel " + std::to_string(c) +
                    " in layer " + std::to_string(conv_ids[l]));
      }
      prev = c;
    }
  }
}

}  // namespace

ModelGraph apply_plan(const ModelGraph& graph, const PruningPlan& plan) {
  validate_plan(graph, plan);
  ModelGraph out = graph;

  int64_t h = graph.input_h, w = graph.input_w;
  std::vector<int64_t> sel;  // kept indices on the current channel axis
  bool have_sel = false;
  bool features_expanded = false;
  int conv_order = -1;

  for (size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& layer = out.layers[i];
    if (auto* conv = std::get_if<ConvSpec>(&layer)) {
      ++conv_order;
      if (have_sel) conv->weight = slice_conv_in(conv->weight, sel);
      const auto& keep = plan.kept[static_cast<size_t>(conv_order)];
      conv->weight = slice_dim0(conv->weight, keep);
      if (!conv->bias.empty()) conv->bias = slice_dim0(conv->bias, keep);
      sel = keep;
      have_sel = true;
      const int64_t k = conv->weight.dim(2);
      h = conv_out_dim(h, k, conv->stride, conv->padding);
      w = conv_out_dim(w, k, conv->stride, conv->padding);
    } else if (auto* bn = std::get_if<BatchNormSpec>(&layer)) {
      if (have_sel) {
        bn->gamma = slice_dim0(bn->gamma, sel);
        bn->beta = slice_dim0(bn->beta, sel);
        bn->running_mean = slice_dim0(bn->running_mean, sel);
        bn->running_var = slice_dim0(bn->running_var, sel);
      }
    } else if (auto* pool = std::get_if<MaxPoolSpec>(&layer)) {
      h = (h - pool->k) / pool->stride + 1;
      w = (w - pool->k) / pool->stride + 1;
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      if (have_sel) {
        // channel selection expands to per-channel feature blocks
        std::vector<int64_t> feat;
        feat.reserve(sel.size() * static_cast<size_t>(h * w));
        for (int64_t c : sel) {
          for (int64_t p = 0; p < h * w; ++p) feat.push_back(c * h * w + p);
        }
        sel = std::move(feat);
        features_expanded = true;
      }
    } else if (std::holds_alternative<GlobalAvgPoolSpec>(layer)) {
      features_expanded = true;  // feature index == channel index
    } else if (auto* lin = std::get_if<LinearSpec>(&layer)) {
      if (have_sel) {
        if (!features_expanded) {
          throw_shape("apply_plan: linear head directly after conv is not "
                      "supported; insert flatten or gap");
        }
        lin->weight = slice_linear_in(lin->weight, sel);
      }
      have_sel = false;
    }
  }
  validate_graph(out);
  return out;
}

// ---------------------------------------------------------------------------
// plan serialization
// ---------------------------------------------------------------------------

void write_plan(const PruningPlan& plan, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_data("cannot open plan file for writing: " + path);
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  os << "whitebox-plan v1\n";
  os << "alpha " << fmt(plan.target_rate) << "\n";
  os << "achieved " << fmt(plan.achieved_rate) << "\n";
  os << "score_kind " << score_kind_name(plan.score_kind) << "\n";
  os << "mu " << fmt(plan.mu) << "\n";
  os << "baseline_flops " << plan.baseline_flops << "\n";
  os << "pruned_flops " << plan.pruned_flops << "\n";
  os << "layers " << plan.layer_ids.size() << "\n";
  for (size_t l = 0; l < plan.layer_ids.size(); ++l) {
    os << "layer " << plan.layer_ids[l] << " orig " << plan.original[l]
       << " kept " << plan.kept[l].size() << " flops_before "
       << plan.layer_flops_before[l] << " flops_after "
       << plan.layer_flops_after[l] << "\n";
    os << "keep";
    for (int64_t c : plan.kept[l]) os << " " << c;
    os << "\n";
  }
  if (!os) throw_data("write failure on plan file: " + path);
}

PruningPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw_data("cannot open plan file: " + path);
  PruningPlan plan;
  std::string line;
  if (!std::getline(is, line) || line != "whitebox-plan v1") {
    throw_data("bad plan header in " + path);
  }
  auto next_kv = [&](const std::string& key) {
    if (!std::getline(is, line)) throw_data("truncated plan file: " + path);
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k != key) throw_data("plan file: expected '" + key + "', got '" + k +
                             "' in " + path);
    std::string rest;
    ls >> rest;
    return rest;
  };
  plan.target_rate = std::stod(next_kv("alpha"));
  plan.achieved_rate = std::stod(next_kv("achieved"));
  plan.score_kind = score_kind_from_name(next_kv("score_kind"));
  plan.mu = std::stod(next_kv("mu"));
  plan.baseline_flops = std::stoull(next_kv("baseline_flops"));
  plan.pruned_flops = std::stoull(next_kv("pruned_flops"));
  const size_t layers = std::stoul(next_kv("layers"));
  for (size_t l = 0; l < layers; ++l) {
    if (!std::getline(is, line)) throw_data("truncated plan file: " + path);
    std::istringstream ls(line);
    std::string tok;
    int layer_id;
    int64_t orig;
    size_t kept_count;
    uint64_t fb, fa;
    ls >> tok >> layer_id;
    if (tok != "layer") throw_data("plan file: bad layer line in " + path);
    ls >> tok >> orig;
    ls >> tok >> kept_count;
    ls >> tok >> fb;
    ls >> tok >> fa;
    if (!ls) throw_data("plan file: bad layer line in " + path);
    if (!std::getline(is, line)) throw_data("truncated plan file: " + path);
    std::istringstream ks(line);
    ks >> tok;
    if (tok != "keep") throw_data("plan file: bad keep line in " + path);
    std::vector<int64_t> kept;
    int64_t c;
    while (ks >> c) kept.push_back(c);
    if (kept.size() != kept_count) {
      throw_data("plan file: kept count mismatch in " + path);
    }
    plan.layer_ids.push_back(layer_id);
    plan.original.push_back(orig);
    plan.kept.push_back(std::move(kept));
    plan.layer_flops_before.push_back(fb);
    plan.layer_flops_after.push_back(fa);
  }
  return plan;
}

}  // namespace whitebox
