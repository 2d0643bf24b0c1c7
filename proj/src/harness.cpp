#include "whitebox/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "whitebox/checkpoint.hpp"
#include "whitebox/optim.hpp"

namespace whitebox {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_config(const ConfigMap& cfg) {
  TrainConfig c;
  c.lambda = cfg.get_double("lambda", c.lambda);
  c.mu = cfg.get_double("mu", c.mu);
  c.sigma = cfg.get_double("sigma", c.sigma);
  c.mask_epochs = static_cast<int>(cfg.get_int("mask_epochs", c.mask_epochs));
  c.finetune_epochs =
      static_cast<int>(cfg.get_int("finetune_epochs", c.finetune_epochs));
  c.lr = static_cast<float>(cfg.get_double("lr", c.lr));
  c.lr_milestones = cfg.get_int_list("lr_milestones", c.lr_milestones);
  c.lr_decay = static_cast<float>(cfg.get_double("lr_decay", c.lr_decay));
  c.momentum = static_cast<float>(cfg.get_double("momentum", c.momentum));
  c.weight_decay =
      static_cast<float>(cfg.get_double("weight_decay", c.weight_decay));
  c.batch_size = cfg.get_int("batch_size", c.batch_size);
  c.alpha = cfg.get_double("alpha", c.alpha);
  c.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  c.score_kind =
      score_kind_from_name(cfg.get_str("score_kind", "abs_sum"));
  const std::string norm = cfg.get_str("norm_kind", "l2_group");
  if (norm == "l2_group") {
    c.norm_kind = NormKind::kL2Group;
  } else if (norm == "l1") {
    c.norm_kind = NormKind::kL1;
  } else {
    throw_config("unknown norm_kind '" + norm + "'");
  }
  const std::string vote = cfg.get_str("vote_mode", "scores");
  if (vote == "scores") {
    c.vote_mode = VoteMode::kScores;
  } else if (vote == "random") {
    c.vote_mode = VoteMode::kRandomScores;
  } else {
    throw_config("unknown vote_mode '" + vote + "'");
  }
  c.classwise_mask = cfg.get_bool("classwise_mask", c.classwise_mask);
  c.soft_mask = cfg.get_bool("soft_mask", c.soft_mask);
  c.select_best = cfg.get_bool("select_best", c.select_best);
  c.model_widths = cfg.get_int_list("model_widths", c.model_widths);
  c.eval_batch = cfg.get_int("eval_batch", c.eval_batch);

  c.data_kind = cfg.get_str("data.kind", c.data_kind);
  c.data_dir = cfg.get_str("data.dir", c.data_dir);
  if (cfg.has("data.train")) {
    c.train_files = split_list(cfg.get_str("data.train", ""));
  }
  if (cfg.has("data.test")) {
    c.test_files = split_list(cfg.get_str("data.test", ""));
  }
  c.synth_classes = cfg.get_int("synth.classes", c.synth_classes);
  c.synth_train_per_class =
      cfg.get_int("synth.train_per_class", c.synth_train_per_class);
  c.synth_test_per_class =
      cfg.get_int("synth.test_per_class", c.synth_test_per_class);
  c.synth_channels = cfg.get_int("synth.channels", c.synth_channels);
  c.synth_h = cfg.get_int("synth.h", c.synth_h);
  c.synth_w = cfg.get_int("synth.w", c.synth_w);

  c.augment_enabled = cfg.get_bool("augment.enabled", c.augment_enabled);
  c.pad_crop = static_cast<int>(cfg.get_int("augment.pad_crop", c.pad_crop));
  c.hflip_prob = cfg.get_double("augment.hflip_prob", c.hflip_prob);
  c.threads = static_cast<int>(cfg.get_int("threads", c.threads));
  c.validate();
  return c;
}

int TrainConfig::resolved_mask_epochs() const {
  if (mask_epochs > 0) return mask_epochs;
  return std::max(1, finetune_epochs / 10);
}

void TrainConfig::validate() const {
  if (resolved_mask_epochs() < 1) throw_config("mask_epochs must be >= 1");
  if (finetune_epochs < 0) throw_config("finetune_epochs must be >= 0");
  if (lambda < 0.0) throw_config("lambda must be >= 0");
  if (sigma < 0.0) throw_config("sigma must be >= 0");
  if (batch_size < 1) throw_config("batch_size must be >= 1");
  if (alpha < 0.0 || alpha >= 1.0) throw_config("alpha must lie in [0, 1)");
  if (model_widths.empty()) throw_config("model_widths must be nonempty");
  int64_t prev = -1;
  for (int64_t m : lr_milestones) {
    if (m <= prev) throw_config("lr_milestones must be strictly increasing");
    if (m >= finetune_epochs) {
      throw_config("lr milestone " + std::to_string(m) +
                   " is out of range for " + std::to_string(finetune_epochs) +
                   " finetune epochs");
    }
    prev = m;
  }
}

Dataset load_dataset(const TrainConfig& config) {
  Dataset data;
  if (config.data_kind == "synth") {
    data.train = synth_blobs(config.synth_classes, config.synth_train_per_class,
                             config.synth_channels, config.synth_h,
                             config.synth_w, config.seed * 7919 + 1);
    data.test = synth_blobs(config.synth_classes, config.synth_test_per_class,
                            config.synth_channels, config.synth_h,
                            config.synth_w, config.seed * 7919 + 2);
  } else if (config.data_kind == "cifar10") {
    std::string root = config.data_dir;
    if (root.empty()) {
      const char* env = std::getenv("WHITEBOX_DATA_DIR");
      if (env) root = env;
    }
    if (root.empty()) {
      throw_data("cifar10 dataset root not set (data.dir or "
                 "WHITEBOX_DATA_DIR)");
    }
    bool first = true;
    for (const std::string& f : config.train_files) {
      LabeledImageSet part = load_cifar10_binary(root + "/" + f);
      if (first) {
        data.train = std::move(part);
        first = false;
      } else {
        // append
        const int64_t n0 = data.train.size(), n1 = part.size();
        Tensor merged({n0 + n1, part.images.dim(1), part.images.dim(2),
                       part.images.dim(3)});
        std::copy(data.train.images.vec().begin(),
                  data.train.images.vec().end(), merged.vec().begin());
        std::copy(part.images.vec().begin(), part.images.vec().end(),
                  merged.vec().begin() + data.train.images.numel());
        data.train.images = std::move(merged);
        data.train.labels.insert(data.train.labels.end(), part.labels.begin(),
                                 part.labels.end());
      }
    }
    if (config.test_files.empty()) throw_data("no cifar10 test files given");
    data.test = load_cifar10_binary(root + "/" + config.test_files[0]);
  } else {
    throw_config("unknown data.kind '" + config.data_kind + "'");
  }
  data.train.split = "train";
  data.test.split = "test";
  data.augment.pad_crop = config.augment_enabled ? config.pad_crop : 0;
  data.augment.hflip_prob = config.augment_enabled ? config.hflip_prob : 0.0;
  compute_channel_stats(data.train, &data.augment.mean, &data.augment.stddev);
  return data;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

double evaluate_impl(ModelGraph& model, MaskSet* masks, double mu,
                     const LabeledImageSet& testset,
                     const AugmentConfig& normalize, int64_t eval_batch) {
  if (testset.size() == 0) throw_data("evaluate: empty test set");
  Network net(model);
  const int64_t n = testset.size();
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += eval_batch) {
    const int64_t len = std::min(eval_batch, n - start);
    std::vector<int64_t> idx(static_cast<size_t>(len));
    std::iota(idx.begin(), idx.end(), start);
    Tensor images = normalize_images(gather_images(testset, idx), normalize);
    std::vector<int> labels = gather_labels(testset, idx);
    Tensor soft;
    if (masks) {
      // degenerate soft labels: truth 1, everything else at the mean
      soft = Tensor({len, testset.class_count});
      soft.fill(static_cast<float>(mu));
      for (int64_t i = 0; i < len; ++i) {
        soft[i * testset.class_count + labels[static_cast<size_t>(i)]] = 1.0f;
      }
    }
    Tensor logits =
        net.forward(images, /*train=*/false, masks, masks ? &soft : nullptr);
    const int64_t d = logits.dim(1);
    for (int64_t i = 0; i < len; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < d; ++j) {
        if (logits[i * d + j] > logits[i * d + best]) best = j;
      }
      if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

double evaluate(ModelGraph& model, const LabeledImageSet& testset,
                const AugmentConfig& normalize, int64_t eval_batch) {
  return evaluate_impl(model, nullptr, 0.0, testset, normalize, eval_batch);
}

double evaluate_masked(ModelGraph& model, MaskSet& masks, double mu,
                       const LabeledImageSet& testset,
                       const AugmentConfig& normalize, int64_t eval_batch) {
  return evaluate_impl(model, &masks, mu, testset, normalize, eval_batch);
}

// ---------------------------------------------------------------------------
// training phases
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<int64_t>> make_batches(int64_t n, int64_t batch_size,
                                               RandomStream& rng) {
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t len = std::min(batch_size, n - start);
    batches.emplace_back(order.begin() + start, order.begin() + start + len);
  }
  return batches;
}

}  // namespace

void train_mask_phase(ModelGraph& model, MaskSet& masks, const Dataset& data,
                      const TrainConfig& config, RandomStream rng,
                      RunReport* report) {
  for (const auto& m : masks.items) {
    for (int64_t i = 0; i < m.values.numel(); ++i) {
      if (m.values[i] != 1.0f) {
        throw_state("train_mask_phase: masks must start at all ones");
      }
    }
  }
  Network net(model);
  SgdOptimizer opt(config.lr, config.momentum, config.weight_decay);
  for (const NamedParam& p : trainable_params(model)) {
    opt.register_param(p.tensor, /*decay=*/true);
  }
  for (auto& m : masks.items) {
    opt.register_param(&m.values, /*decay=*/false);
  }
  SparsityConfig sparsity{config.lambda, config.norm_kind};
  const int epochs = config.resolved_mask_epochs();
  const int64_t d = data.train.class_count;

  // hard one-hot activation is the sigma=0, mu=0 degenerate draw
  const double soft_mu = config.soft_mask ? config.mu : 0.0;
  const double soft_sigma = config.soft_mask ? config.sigma : 0.0;

  uint64_t batch_counter = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double loss_sum = 0.0, penalty_sum = 0.0;
    int64_t batches = 0;
    for (const auto& idx : make_batches(data.train.size(), config.batch_size,
                                        rng)) {
      Tensor images = gather_images(data.train, idx);
      images = augment(images, data.augment, rng);
      Tensor labels = onehot(gather_labels(data.train, idx), d);
      SoftLabelBatch soft = soften_labels(labels, soft_mu, soft_sigma, rng);
      soft.rng_seed = batch_counter++;

      zero_param_grads(model);
      zero_mask_grads(masks);
      ObjectiveResult obj = total_objective(net, images, labels, &masks,
                                            &soft.values, sparsity, true);
      if (!std::isfinite(obj.total)) {
        throw_training("mask phase diverged (non-finite loss) at epoch " +
                       std::to_string(epoch) + " batch " +
                       std::to_string(batches));
      }
      opt.step();
      loss_sum += obj.total;
      penalty_sum += obj.penalty;
      ++batches;
    }
    EpochStat stat;
    stat.phase = "mask";
    stat.epoch = epoch;
    stat.lr = config.lr;
    stat.loss = loss_sum / static_cast<double>(batches);
    stat.penalty = penalty_sum / static_cast<double>(batches);
    stat.test_acc = evaluate_masked(model, masks, config.mu, data.test,
                                    data.augment, config.eval_batch);
    if (report) report->curves.push_back(stat);
  }
}

void finetune_phase(ModelGraph& model, const Dataset& data,
                    const TrainConfig& config, RandomStream rng,
                    RunReport* report) {
  Network net(model);
  SgdOptimizer opt(config.lr, config.momentum, config.weight_decay);
  for (const NamedParam& p : trainable_params(model)) {
    opt.register_param(p.tensor, /*decay=*/true);
  }
  SparsityConfig no_sparsity{0.0, config.norm_kind};
  const int64_t d = data.train.class_count;

  double best_acc = -1.0;
  Checkpoint best_state;
  for (int epoch = 0; epoch < config.finetune_epochs; ++epoch) {
    float lr = config.lr;
    for (int64_t m : config.lr_milestones) {
      if (epoch >= m) lr *= config.lr_decay;
    }
    opt.set_lr(lr);

    double loss_sum = 0.0;
    int64_t batches = 0;
    for (const auto& idx : make_batches(data.train.size(), config.batch_size,
                                        rng)) {
      Tensor images = gather_images(data.train, idx);
      images = augment(images, data.augment, rng);
      Tensor labels = onehot(gather_labels(data.train, idx), d);
      zero_param_grads(model);
      ObjectiveResult obj = total_objective(net, images, labels, nullptr,
                                            nullptr, no_sparsity, true);
      if (!std::isfinite(obj.total)) {
        throw_training("finetune diverged (non-finite loss) at epoch " +
                       std::to_string(epoch) + " batch " +
                       std::to_string(batches));
      }
      opt.step();
      loss_sum += obj.total;
      ++batches;
    }
    EpochStat stat;
    stat.phase = "finetune";
    stat.epoch = epoch;
    stat.lr = lr;
    stat.loss = loss_sum / static_cast<double>(batches);
    stat.test_acc = evaluate(model, data.test, data.augment, config.eval_batch);
    if (report) report->curves.push_back(stat);
    if (config.select_best && stat.test_acc > best_acc) {
      best_acc = stat.test_acc;
      best_state = graph_state(model);
    }
  }
  if (config.select_best && best_acc >= 0.0) {
    load_graph_state(model, best_state);
  }
}

double fold_scale_mu(const TrainConfig& config, int64_t class_count) {
  if (!config.classwise_mask) return 1.0;  // scale was mask[0,c] directly
  if (!config.soft_mask) {
    // hard activation: each class row fires with uniform frequency
    return 1.0 / static_cast<double>(class_count);
  }
  return config.mu;
}

// ---------------------------------------------------------------------------
// artifacts
// ---------------------------------------------------------------------------

void save_phase_checkpoint(const ModelGraph& model, const MaskSet* masks,
                           const std::string& path) {
  Checkpoint ckpt = graph_state(model);
  if (masks) {
    for (const auto& m : masks->items) {
      ckpt.add("mask." + std::to_string(m.layer_id), m.values);
    }
  }
  save_checkpoint(ckpt, path);
}

void load_masks(MaskSet& masks, const Checkpoint& ckpt) {
  for (auto& m : masks.items) {
    const std::string name = "mask." + std::to_string(m.layer_id);
    const Tensor* t = ckpt.find(name);
    if (!t) throw_data("checkpoint missing tensor '" + name + "'");
    if (t->shape() != m.values.shape()) {
      throw_shape("checkpoint mask '" + name + "' has shape " +
                  t->shape_str() + ", expected " + m.values.shape_str());
    }
    m.values = *t;
  }
}

void write_report(const RunReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_data("cannot open report file for writing: " + path);
  char buf[96];
  auto pct = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.2f%%", v * 100.0);
    return std::string(buf);
  };
  const double reduction =
      report.baseline_flops == 0
          ? 0.0
          : 1.0 - static_cast<double>(report.pruned_flops) /
                      static_cast<double>(report.baseline_flops);
  os << "whitebox run report\n";
  os << "final_top1 " << pct(report.final_accuracy) << "\n";
  os << "flops " << report.baseline_flops << " -> " << report.pruned_flops
     << " (reduction " << pct(reduction) << ", target " << pct(
         report.target_rate)
     << ", achieved " << pct(report.achieved_rate) << ")\n";
  os << "layers kept/original:\n";
  for (const auto& l : report.layer_stats) {
    os << "  layer" << l.layer_id << " " << l.kept << "/" << l.original
       << "\n";
  }
  std::snprintf(buf, sizeof(buf),
                "timing mask=%.1fs finetune=%.1fs total=%.1fs",
                report.mask_phase_seconds, report.finetune_seconds,
                report.total_seconds);
  os << buf << "\n";
}

void write_curves_csv(const RunReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_data("cannot open curves file for writing: " + path);
  os << "phase,epoch,lr,loss,penalty,test_acc\n";
  char buf[160];
  for (const auto& s : report.curves) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6g,%.6g,%.6g,%.6g",
                  s.phase.c_str(), s.epoch, static_cast<double>(s.lr), s.loss,
                  s.penalty, s.test_acc);
    os << buf << "\n";
  }
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

RunReport run_pipeline(const TrainConfig& config, const Dataset& data,
                       const std::string& out_dir) {
  config.validate();
  RunReport report;
  const double t_start = now_seconds();
  RandomStream master(config.seed);
  RandomStream init_rng = master.derive(1);
  RandomStream mask_rng = master.derive(2);
  RandomStream vote_rng = master.derive(3);
  RandomStream finetune_rng = master.derive(4);

  const int64_t d = data.train.class_count;
  ModelGraph model =
      build_cnn(config.model_widths, data.train.images.dim(1),
                data.train.images.dim(2), data.train.images.dim(3), d);
  init_weights(model, init_rng);
  validate_graph(model);

  MaskSet masks = init_masks(model, config.classwise_mask ? d : 1);

  // phase 1: joint mask training
  const double t_mask = now_seconds();
  train_mask_phase(model, masks, data, config, mask_rng, &report);
  report.mask_phase_seconds = now_seconds() - t_mask;
  if (!out_dir.empty()) {
    save_phase_checkpoint(model, &masks, out_dir + "/mask_phase.ckpt");
  }

  // phase 2: scoring + global voting
  FlopsModel flops = FlopsModel::from_graph(model);
  ChannelScoreTable scores = channel_scores(masks, config.score_kind);
  if (config.vote_mode == VoteMode::kRandomScores) {
    for (auto& layer_scores : scores.scores) {
      for (double& s : layer_scores) s = vote_rng.uniform();
    }
  }
  PruningPlan plan = global_vote(scores, model, flops, config.alpha);
  plan.mu = fold_scale_mu(config, d);
  if (!out_dir.empty()) write_plan(plan, out_dir + "/plan.txt");

  // phase 3: fold + surgery
  ModelGraph pruned = apply_plan(model, plan);
  const std::vector<int> conv_ids = model.conv_layers();
  for (size_t l = 0; l < conv_ids.size(); ++l) {
    auto& conv = std::get<ConvSpec>(pruned.layers[conv_ids[l]]);
    const ClasswiseMask* m = masks.find(conv_ids[l]);
    Tensor sliced = slice_mask_columns(m->values, plan.kept[l]);
    fold_mask(conv.weight, conv.bias, sliced, plan.mu);
  }
  validate_graph(pruned);
  if (!out_dir.empty()) {
    save_phase_checkpoint(pruned, nullptr, out_dir + "/pruned.ckpt");
  }

  // phase 4: fine-tune + evaluate
  const double t_ft = now_seconds();
  finetune_phase(pruned, data, config, finetune_rng, &report);
  report.finetune_seconds = now_seconds() - t_ft;
  if (!out_dir.empty()) {
    save_phase_checkpoint(pruned, nullptr, out_dir + "/final.ckpt");
  }

  report.final_accuracy =
      evaluate(pruned, data.test, data.augment, config.eval_batch);
  report.target_rate = plan.target_rate;
  report.achieved_rate = plan.achieved_rate;
  report.baseline_flops = plan.baseline_flops;
  report.pruned_flops = plan.pruned_flops;
  for (size_t l = 0; l < plan.layer_ids.size(); ++l) {
    report.layer_stats.push_back({plan.layer_ids[l], plan.original[l],
                                  static_cast<int64_t>(plan.kept[l].size())});
  }
  report.plan = plan;
  report.total_seconds = now_seconds() - t_start;
  if (!out_dir.empty()) {
    write_report(report, out_dir + "/report.txt");
    write_curves_csv(report, out_dir + "/curves.csv");
  }
  return report;
}

}  // namespace whitebox
