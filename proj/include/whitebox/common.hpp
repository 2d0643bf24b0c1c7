#ifndef WHITEBOX_COMMON_HPP_
#define WHITEBOX_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace whitebox {

// Error taxonomy shared by the library and the CLI exit codes.
enum class ErrorKind {
  kConfig,    // bad config file / key / value
  kData,      // dataset or artifact file problems
  kTraining,  // divergence, NaN loss
  kShape,     // tensor/layer shape mismatch
  kState,     // operation invoked before its preconditions hold
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& msg) {
  throw Error(ErrorKind::kShape, msg);
}
[[noreturn]] inline void throw_config(const std::string& msg) {
  throw Error(ErrorKind::kConfig, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::kData, msg);
}
[[noreturn]] inline void throw_training(const std::string& msg) {
  throw Error(ErrorKind::kTraining, msg);
}
[[noreturn]] inline void throw_state(const std::string& msg) {
  throw Error(ErrorKind::kState, msg);
}

}  // namespace whitebox

#endif  // WHITEBOX_COMMON_HPP_
