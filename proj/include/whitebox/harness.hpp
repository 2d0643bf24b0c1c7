#ifndef WHITEBOX_HARNESS_HPP_
#define WHITEBOX_HARNESS_HPP_

#include <string>
#include <vector>

#include "whitebox/config.hpp"
#include "whitebox/data.hpp"
#include "whitebox/graph.hpp"
#include "whitebox/mask.hpp"
#include "whitebox/network.hpp"
#include "whitebox/pruner.hpp"

namespace whitebox {

// How channel scores are produced at the voting step. kRandomScores is
// the control baseline: uniform random scores at the same budget.
enum class VoteMode { kScores, kRandomScores };

struct TrainConfig {
  double lambda = 0.01;
  double mu = 0.5;
  double sigma = 1.0;
  int mask_epochs = -1;  // -1 resolves to 10% of finetune_epochs (min 1)
  int finetune_epochs = 20;
  float lr = 0.1f;
  std::vector<int64_t> lr_milestones;  // 0-based finetune epochs
  float lr_decay = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  int64_t batch_size = 64;
  double alpha = 0.5;
  uint64_t seed = 1;
  ScoreKind score_kind = ScoreKind::kAbsSum;
  NormKind norm_kind = NormKind::kL2Group;
  VoteMode vote_mode = VoteMode::kScores;
  bool classwise_mask = true;  // off: one shared mask row per channel
  bool soft_mask = true;       // off: hard one-hot mask activation
  bool select_best = true;     // best-accuracy finetune checkpoint
  std::vector<int64_t> model_widths = {8, 16, 32, 32};
  int64_t eval_batch = 256;

  std::string data_kind = "synth";  // synth | cifar10
  std::string data_dir;             // cifar10 root; env fallback
  std::vector<std::string> train_files = {"data_batch_1.bin"};
  std::vector<std::string> test_files = {"test_batch.bin"};
  int64_t synth_classes = 10;
  int64_t synth_train_per_class = 500;
  int64_t synth_test_per_class = 100;
  int64_t synth_channels = 3, synth_h = 32, synth_w = 32;

  bool augment_enabled = false;
  int pad_crop = 4;
  double hflip_prob = 0.5;

  int threads = 1;

  static TrainConfig from_config(const ConfigMap& cfg);
  void validate() const;
  int resolved_mask_epochs() const;
};

struct Dataset {
  LabeledImageSet train;
  LabeledImageSet test;
  AugmentConfig augment;  // normalization constants always populated
};

Dataset load_dataset(const TrainConfig& config);

struct EpochStat {
  std::string phase;
  int epoch = 0;
  float lr = 0.0f;
  double loss = 0.0;     // mean total objective over batches
  double penalty = 0.0;  // mean unscaled sparsity penalty
  double test_acc = 0.0;
};

struct LayerPruneStat {
  int layer_id = 0;
  int64_t original = 0;
  int64_t kept = 0;
};

struct RunReport {
  std::vector<EpochStat> curves;
  double final_accuracy = 0.0;
  double target_rate = 0.0;
  double achieved_rate = 0.0;
  uint64_t baseline_flops = 0;
  uint64_t pruned_flops = 0;
  std::vector<LayerPruneStat> layer_stats;
  PruningPlan plan;
  double mask_phase_seconds = 0.0;
  double finetune_seconds = 0.0;
  double total_seconds = 0.0;
};

// Top-1 accuracy of the plain network in eval mode.
double evaluate(ModelGraph& model, const LabeledImageSet& testset,
                const AugmentConfig& normalize, int64_t eval_batch = 256);

// Mid-mask-phase diagnostic: masked forward with degenerate soft labels
// (ground truth 1, all other entries mu).
double evaluate_masked(ModelGraph& model, MaskSet& masks, double mu,
                       const LabeledImageSet& testset,
                       const AugmentConfig& normalize,
                       int64_t eval_batch = 256);

// Joint weight+mask training of the sparsity-regularized objective for
// the configured number of mask epochs. Masks must be all ones.
void train_mask_phase(ModelGraph& model, MaskSet& masks, const Dataset& data,
                      const TrainConfig& config, RandomStream rng,
                      RunReport* report);

// Plain training under the step learning-rate schedule; keeps the
// best-accuracy state unless select_best is off.
void finetune_phase(ModelGraph& model, const Dataset& data,
                    const TrainConfig& config, RandomStream rng,
                    RunReport* report);

// The scalar folded into each kept channel: mu for soft training, the
// uniform class frequency for hard one-hot activation, and 1 for the
// shared-mask ablation (whose scale never saw mu).
double fold_scale_mu(const TrainConfig& config, int64_t class_count);

// Full pipeline: build -> mask training -> scoring -> voting -> fold ->
// surgery -> fine-tune -> evaluate. Artifacts (checkpoints, plan, report,
// curves) are written under out_dir when it is non-empty.
RunReport run_pipeline(const TrainConfig& config, const Dataset& data,
                       const std::string& out_dir);

// Artifact writers shared by the pipeline and the CLI.
void save_phase_checkpoint(const ModelGraph& model, const MaskSet* masks,
                           const std::string& path);
void load_masks(MaskSet& masks, const Checkpoint& ckpt);
void write_report(const RunReport& report, const std::string& path);
void write_curves_csv(const RunReport& report, const std::string& path);

}  // namespace whitebox

#endif  // WHITEBOX_HARNESS_HPP_
