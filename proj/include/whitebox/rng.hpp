#ifndef WHITEBOX_RNG_HPP_
#define WHITEBOX_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace whitebox {

// Deterministic random stream. Normal draws use an explicit Box-Muller
// transform instead of std::normal_distribution so that byte-level
// artifact determinism does not depend on standard-library internals.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : seed_(seed), engine_(seed) {}

  // Independent stream derived from this one's seed, e.g. one per phase.
  RandomStream derive(uint64_t stream_id) const {
    return RandomStream(seed_ ^ (0x9e3779b97f4a7c15ull * (stream_id + 1)));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n));
  }

  double normal(double mean, double stddev) {
    if (stddev == 0.0) return mean;
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Fisher-Yates; self-contained for cross-platform reproducibility.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace whitebox

#endif  // WHITEBOX_RNG_HPP_
