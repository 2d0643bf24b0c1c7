#ifndef WHITEBOX_TESTS_TEST_UTIL_HPP_
#define WHITEBOX_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include "whitebox/rng.hpp"
#include "whitebox/tensor.hpp"

namespace whitebox::test {

template <typename T>
TensorT<T> random_tensor(std::vector<int64_t> shape, RandomStream& rng,
                         double lo = -1.0, double hi = 1.0) {
  TensorT<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  }
  return t;
}

// Values bounded away from zero, for kinked ops like relu.
template <typename T>
TensorT<T> random_tensor_no_kink(std::vector<int64_t> shape, RandomStream& rng,
                                 double margin = 1e-2) {
  TensorT<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(margin, 1.0);
    t[i] = static_cast<T>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central finite differences on every entry of `param` against the
// analytic gradient. `loss` must recompute the full scalar objective
// from the current parameter values. Returns the worst relative error.
inline double fd_check(DTensor& param, const std::vector<double>& analytic,
                       const std::function<double()>& loss, double h = 1e-4) {
  double worst = 0.0;
  for (int64_t i = 0; i < param.numel(); ++i) {
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, rel_err(analytic[static_cast<size_t>(i)], numeric));
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return worst;
}

template <typename T>
double max_rel_diff(const TensorT<T>& a, const TensorT<T>& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, rel_err(a[i], b[i]));
  }
  return worst;
}

}  // namespace whitebox::test

#endif  // WHITEBOX_TESTS_TEST_UTIL_HPP_
