#ifndef WHITEBOX_TENSOR_HPP_
#define WHITEBOX_TENSOR_HPP_

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "whitebox/common.hpp"

namespace whitebox {

// Dense N-dimensional array. Single precision (Tensor) carries training
// state; double precision (DTensor) backs the gradient-check test mode.
// The gradient buffer is allocated lazily and always matches data size.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }

  TensorT(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != numel_of(shape_)) {
      throw_shape("tensor data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_string(shape_));
    }
  }

  static int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw_shape("negative dimension in " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  std::string shape_str() const { return shape_string(shape_); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  T operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  bool has_grad() const { return !grad_.empty(); }
  std::vector<T>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  const std::vector<T>& grad() const { return grad_; }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> d(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
    return TensorT<U>(shape_, std::move(d));
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

// Debug-build guard: forward/backward kernels call this on their outputs.
template <typename T>
inline void debug_check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) {
    throw_training(std::string("non-finite values produced by ") + op);
  }
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace whitebox

#endif  // WHITEBOX_TENSOR_HPP_
