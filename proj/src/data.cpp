#include "whitebox/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace whitebox {

namespace {
constexpr int64_t kCifarC = 3, kCifarH = 32, kCifarW = 32;
constexpr int64_t kCifarRecord = 1 + kCifarC * kCifarH * kCifarW;
}  // namespace

LabeledImageSet load_cifar10_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw_data("cannot open dataset file: " + path);
  const int64_t file_size = static_cast<int64_t>(is.tellg());
  if (file_size % kCifarRecord != 0) {
    throw_data("dataset file " + path + " has size " +
               std::to_string(file_size) + ", not a multiple of " +
               std::to_string(kCifarRecord) + "-byte records");
  }
  const int64_t n = file_size / kCifarRecord;
  is.seekg(0);

  LabeledImageSet set;
  set.class_count = 10;
  set.images = Tensor({n, kCifarC, kCifarH, kCifarW});
  set.labels.resize(static_cast<size_t>(n));
  std::vector<unsigned char> record(static_cast<size_t>(kCifarRecord));
  for (int64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    if (!is) throw_data("short read in dataset file: " + path);
    if (record[0] > 9) {
      throw_data("bad label byte " + std::to_string(record[0]) +
                 " at offset " + std::to_string(i * kCifarRecord) + " in " +
                 path);
    }
    set.labels[static_cast<size_t>(i)] = record[0];
    float* dst = set.images.data() + i * (kCifarRecord - 1);
    for (int64_t p = 0; p < kCifarRecord - 1; ++p) {
      dst[p] = static_cast<float>(record[static_cast<size_t>(p + 1)]) / 255.0f;
    }
  }
  return set;
}

void save_cifar10_binary(const LabeledImageSet& set, const std::string& path) {
  if (set.size() > 0 &&
      (set.images.dim(1) != kCifarC || set.images.dim(2) != kCifarH ||
       set.images.dim(3) != kCifarW)) {
    throw_data("save_cifar10_binary: images must be 3x32x32, got " +
               set.images.shape_str());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw_data("cannot open dataset file for writing: " + path);
  const int64_t n = set.size();
  std::vector<unsigned char> record(static_cast<size_t>(kCifarRecord));
  for (int64_t i = 0; i < n; ++i) {
    record[0] = static_cast<unsigned char>(set.labels[static_cast<size_t>(i)]);
    const float* src = set.images.data() + i * (kCifarRecord - 1);
    for (int64_t p = 0; p < kCifarRecord - 1; ++p) {
      const float v = std::clamp(src[p], 0.0f, 1.0f);
      record[static_cast<size_t>(p + 1)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(record.data()), kCifarRecord);
  }
  if (!os) throw_data("write failure on dataset file: " + path);
}

LabeledImageSet synth_blobs(int64_t class_count, int64_t n_per_class,
                            int64_t channels, int64_t h, int64_t w,
                            uint64_t seed) {
  if (class_count < 2) throw_config("synth_blobs: need at least 2 classes");
  RandomStream rng(seed);
  const int64_t n = class_count * n_per_class;
  LabeledImageSet set;
  set.class_count = class_count;
  set.images = Tensor({n, channels, h, w});
  set.labels.resize(static_cast<size_t>(n));

  // class signatures: blob center on a ring + per-channel amplitudes
  std::vector<double> cx(class_count), cy(class_count);
  std::vector<std::vector<double>> amp(static_cast<size_t>(class_count));
  for (int64_t d = 0; d < class_count; ++d) {
    const double angle =
        2.0 * M_PI * static_cast<double>(d) / static_cast<double>(class_count);
    cx[static_cast<size_t>(d)] =
        0.5 * static_cast<double>(w) + 0.3 * static_cast<double>(w) *
                                           std::cos(angle);
    cy[static_cast<size_t>(d)] =
        0.5 * static_cast<double>(h) + 0.3 * static_cast<double>(h) *
                                           std::sin(angle);
    auto& a = amp[static_cast<size_t>(d)];
    a.resize(static_cast<size_t>(channels));
    for (int64_t ch = 0; ch < channels; ++ch) {
      a[static_cast<size_t>(ch)] = rng.uniform(0.35, 0.95);
    }
  }

  const double radius = static_cast<double>(std::min(h, w)) / 7.0;
  const double noise_sigma = 0.06;
  int64_t sample = 0;
  for (int64_t d = 0; d < class_count; ++d) {
    for (int64_t s = 0; s < n_per_class; ++s, ++sample) {
      set.labels[static_cast<size_t>(sample)] = static_cast<int>(d);
      const double jx = cx[static_cast<size_t>(d)] + rng.normal(0.0, 1.2);
      const double jy = cy[static_cast<size_t>(d)] + rng.normal(0.0, 1.2);
      const double gain = rng.uniform(0.8, 1.2);
      for (int64_t ch = 0; ch < channels; ++ch) {
        const double a = amp[static_cast<size_t>(d)][static_cast<size_t>(ch)];
        float* plane =
            set.images.data() + (sample * channels + ch) * h * w;
        for (int64_t y = 0; y < h; ++y) {
          for (int64_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - jx;
            const double dy = static_cast<double>(y) - jy;
            const double v =
                a * gain *
                    std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius)) +
                rng.normal(0.0, noise_sigma);
            plane[y * w + x] =
                static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
    }
  }
  return set;
}

void compute_channel_stats(const LabeledImageSet& set,
                           std::vector<float>* mean, std::vector<float>* std) {
  const int64_t n = set.size();
  if (n == 0) throw_data("compute_channel_stats: empty dataset");
  const int64_t c = set.images.dim(1);
  const int64_t plane = set.images.dim(2) * set.images.dim(3);
  mean->assign(static_cast<size_t>(c), 0.0f);
  std->assign(static_cast<size_t>(c), 0.0f);
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sum_sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const float* src = set.images.data() + (i * c + ch) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        sum += src[p];
        sum_sq += static_cast<double>(src[p]) * src[p];
      }
    }
    const double count = static_cast<double>(n * plane);
    const double m = sum / count;
    const double var = std::max(sum_sq / count - m * m, 1e-8);
    (*mean)[static_cast<size_t>(ch)] = static_cast<float>(m);
    (*std)[static_cast<size_t>(ch)] = static_cast<float>(std::sqrt(var));
  }
}

Tensor augment_geometric(const Tensor& batch, const AugmentConfig& config,
                         RandomStream& rng) {
  const int64_t n = batch.dim(0), c = batch.dim(1);
  const int64_t h = batch.dim(2), w = batch.dim(3);
  if (config.hflip_prob < 0.0 || config.hflip_prob > 1.0) {
    throw_config("augment: hflip_prob must lie in [0,1]");
  }
  const int pad = config.pad_crop;
  Tensor out(batch.shape());
  for (int64_t i = 0; i < n; ++i) {
    int64_t dy = 0, dx = 0;
    if (pad > 0) {
      dy = rng.uniform_int(2 * pad + 1);
      dx = rng.uniform_int(2 * pad + 1);
    }
    const bool flip =
        config.hflip_prob > 0.0 && rng.uniform() < config.hflip_prob;
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (i * c + ch) * h * w;
      float* dst = out.data() + (i * c + ch) * h * w;
      for (int64_t y = 0; y < h; ++y) {
        // crop window position (dy,dx) inside the zero-padded image
        const int64_t sy = y + dy - pad;
        for (int64_t x = 0; x < w; ++x) {
          const int64_t sx = (flip ? (w - 1 - x) : x) + dx - pad;
          dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                               ? src[sy * w + sx]
                               : 0.0f;
        }
      }
    }
  }
  return out;
}

Tensor normalize_images(const Tensor& batch, const AugmentConfig& config) {
  if (config.mean.empty() && config.stddev.empty()) return batch;
  const int64_t n = batch.dim(0), c = batch.dim(1);
  const int64_t plane = batch.dim(2) * batch.dim(3);
  if (config.mean.size() != static_cast<size_t>(c) ||
      config.stddev.size() != static_cast<size_t>(c)) {
    throw_config("normalize: per-channel constants do not match C=" +
                 std::to_string(c));
  }
  Tensor out(batch.shape());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const float m = config.mean[static_cast<size_t>(ch)];
      const float s = config.stddev[static_cast<size_t>(ch)];
      const float* src = batch.data() + (i * c + ch) * plane;
      float* dst = out.data() + (i * c + ch) * plane;
      for (int64_t p = 0; p < plane; ++p) dst[p] = (src[p] - m) / s;
    }
  }
  return out;
}

Tensor augment(const Tensor& batch, const AugmentConfig& config,
               RandomStream& rng) {
  return normalize_images(augment_geometric(batch, config, rng), config);
}

Tensor gather_images(const LabeledImageSet& set,
                     const std::vector<int64_t>& indices) {
  const int64_t c = set.images.dim(1), h = set.images.dim(2),
                w = set.images.dim(3);
  const int64_t stride = c * h * w;
  Tensor out({static_cast<int64_t>(indices.size()), c, h, w});
  for (size_t i = 0; i < indices.size(); ++i) {
    const float* src = set.images.data() + indices[i] * stride;
    std::copy(src, src + stride,
              out.data() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

std::vector<int> gather_labels(const LabeledImageSet& set,
                               const std::vector<int64_t>& indices) {
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    out[i] = set.labels[static_cast<size_t>(indices[i])];
  }
  return out;
}

Tensor onehot(const std::vector<int>& labels, int64_t class_count) {
  Tensor out({static_cast<int64_t>(labels.size()), class_count});
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw_data("label " + std::to_string(labels[i]) + " out of range [0," +
                 std::to_string(class_count) + ")");
    }
    out[static_cast<int64_t>(i) * class_count + labels[i]] = 1.0f;
  }
  return out;
}

}  // namespace whitebox
