#ifndef WHITEBOX_DATA_HPP_
#define WHITEBOX_DATA_HPP_

#include <string>
#include <vector>

#include "whitebox/rng.hpp"
#include "whitebox/tensor.hpp"

namespace whitebox {

struct LabeledImageSet {
  Tensor images;            // [N, C, H, W] with values in [0,1]
  std::vector<int> labels;  // class ids in [0, class_count)
  int64_t class_count = 10;
  std::string split;  // "train" or "test"

  int64_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

// Canonical CIFAR-10 binary layout: 3073-byte records, one label byte
// followed by a 3x32x32 channel-planar row-major pixel block. Pixels are
// scaled to [0,1]. An empty file is a valid empty set.
LabeledImageSet load_cifar10_binary(const std::string& path);

// Serializes to the same record layout; load/save round-trips bit-exactly.
// Image values must be exact multiples of 1/255 (as produced by the
// loader or the synthetic generator's export path).
void save_cifar10_binary(const LabeledImageSet& set, const std::string& path);

// Class-conditional Gaussian blob images: each class owns a blob center
// and a per-channel amplitude signature, with per-sample center jitter,
// amplitude scaling, and pixel noise. Deterministic per seed.
LabeledImageSet synth_blobs(int64_t class_count, int64_t n_per_class,
                            int64_t channels, int64_t h, int64_t w,
                            uint64_t seed);

struct AugmentConfig {
  int pad_crop = 4;         // zero-pad then random-crop back
  double hflip_prob = 0.5;  // horizontal mirror probability
  std::vector<float> mean;  // per-channel normalization constants
  std::vector<float> stddev;
};

// Per-channel moments over a whole set; the default normalization.
void compute_channel_stats(const LabeledImageSet& set,
                           std::vector<float>* mean, std::vector<float>* std);

// Geometric train-time augmentation only (crop + flip), no normalization.
Tensor augment_geometric(const Tensor& batch, const AugmentConfig& config,
                         RandomStream& rng);

// (x - mean_c) / std_c. Identity when the constants are empty.
Tensor normalize_images(const Tensor& batch, const AugmentConfig& config);

// Full train-time path: geometric augmentation followed by normalization.
Tensor augment(const Tensor& batch, const AugmentConfig& config,
               RandomStream& rng);

// Batch assembly helpers.
Tensor gather_images(const LabeledImageSet& set,
                     const std::vector<int64_t>& indices);
std::vector<int> gather_labels(const LabeledImageSet& set,
                               const std::vector<int64_t>& indices);
Tensor onehot(const std::vector<int>& labels, int64_t class_count);

}  // namespace whitebox

#endif  // WHITEBOX_DATA_HPP_
