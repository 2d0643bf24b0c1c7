#ifndef WHITEBOX_CHECKPOINT_HPP_
#define WHITEBOX_CHECKPOINT_HPP_

#include <string>
#include <utility>
#include <vector>

#include "whitebox/tensor.hpp"

namespace whitebox {

// Checkpoint container: ordered list of named float tensors.
//
// On-disk layout (little endian):
//   8-byte magic "WBPRUNE1"
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u64 dims,
//               raw little-endian IEEE-754 float32 payload
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& name, const Tensor& t) {
    tensors.emplace_back(name, t);
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace whitebox

#endif  // WHITEBOX_CHECKPOINT_HPP_
