#ifndef WHITEBOX_PRUNER_HPP_
#define WHITEBOX_PRUNER_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "whitebox/graph.hpp"
#include "whitebox/mask.hpp"

namespace whitebox {

// How a channel's trained mask column is collapsed into one importance
// score. abs_sum is the default: a signed sum would let opposite-signed
// class contributions cancel. signed_sum and l2_norm exist for fidelity
// experiments.
enum class ScoreKind { kAbsSum, kSignedSum, kL2Norm };

const char* score_kind_name(ScoreKind kind);
ScoreKind score_kind_from_name(const std::string& name);

struct ChannelScoreTable {
  std::vector<int> layer_ids;               // conv layer indices, graph order
  std::vector<std::vector<double>> scores;  // per layer, per output channel
  ScoreKind kind = ScoreKind::kAbsSum;
};

ChannelScoreTable channel_scores(const MaskSet& masks, ScoreKind kind);

// Multiply-accumulate cost model (1 MAC = 1 FLOP). Conv layers cost
// K^2 * C_in * C_out * H_out * W_out, the linear head D_in * D_out;
// normalization, activation, and pooling are free. Channel counts are
// indexed by conv order; the head's input width follows the last conv
// through global pooling or flattening.
class FlopsModel {
 public:
  static FlopsModel from_graph(const ModelGraph& graph);

  int conv_count() const { return static_cast<int>(conv_terms_.size()); }
  int64_t conv_channels(int conv_idx) const {
    return conv_terms_[static_cast<size_t>(conv_idx)].full_out;
  }

  // kept_counts[i] = kept output channels of the i-th conv layer.
  uint64_t total(const std::vector<int64_t>& kept_counts) const;
  uint64_t total_full() const;

  // Cost of one conv layer's own term under the given kept counts.
  uint64_t conv_term(int conv_idx,
                     const std::vector<int64_t>& kept_counts) const;

  // Change of total() when conv layer conv_idx drops one channel from the
  // given state. Only that layer's term and its consumer's term move.
  uint64_t removal_delta(int conv_idx,
                         const std::vector<int64_t>& kept_counts) const;

 private:
  struct ConvTerm {
    int64_t k2 = 0;
    int64_t out_hw = 0;
    int64_t full_out = 0;
    int producer = -1;        // conv order index feeding this layer
    int64_t fixed_cin = 0;    // used when producer == -1
  };
  struct LinearTerm {
    bool present = false;
    int64_t d_out = 0;
    int producer = -1;
    int64_t mult = 1;         // spatial multiplier at the head (flatten)
    int64_t fixed_din = 0;    // used when producer == -1
  };

  std::vector<ConvTerm> conv_terms_;
  LinearTerm linear_;
};

uint64_t model_flops(const ModelGraph& graph,
                     const std::vector<int64_t>& kept_counts);

// Which channels survive, per conv layer, plus the rate bookkeeping.
struct PruningPlan {
  std::vector<int> layer_ids;               // conv layer indices, graph order
  std::vector<std::vector<int64_t>> kept;   // sorted kept channel indices
  std::vector<int64_t> original;            // original channel counts
  double target_rate = 0.0;                 // alpha
  double achieved_rate = 0.0;               // alpha-hat
  ScoreKind score_kind = ScoreKind::kAbsSum;
  double mu = 0.5;
  uint64_t baseline_flops = 0;
  uint64_t pruned_flops = 0;
  std::vector<uint64_t> layer_flops_before;  // per conv layer's own term
  std::vector<uint64_t> layer_flops_after;
  // (conv order index, channel) in removal order
  std::vector<std::pair<int, int64_t>> removal_order;
};

// Greedy budgeted selection: all channels sorted by ascending score
// (ties: lower layer, then lower channel index), removed one at a time,
// skipping removals that would empty a layer, until the achieved FLOPs
// reduction reaches alpha. alpha = 0 keeps everything.
PruningPlan global_vote(const ChannelScoreTable& scores,
                        const ModelGraph& graph, const FlopsModel& flops,
                        double alpha);

// Folds a kept-channel mask into the weights: channel c of weight (and
// bias, when present) is multiplied by mu * sum_d mask[d, c].
void fold_mask(Tensor& weight, Tensor& bias, const Tensor& mask_kept,
               double mu);

// Mask restricted to the kept output channels of one layer.
Tensor slice_mask_columns(const Tensor& mask_values,
                          const std::vector<int64_t>& kept);

// Structural surgery: deletes pruned output channels, the corresponding
// input channels of each consumer, per-channel batchnorm state, and the
// head's input features (through flatten or global pooling).
ModelGraph apply_plan(const ModelGraph& graph, const PruningPlan& plan);

void write_plan(const PruningPlan& plan, const std::string& path);
PruningPlan load_plan(const std::string& path);

}  // namespace whitebox

#endif  // WHITEBOX_PRUNER_HPP_
