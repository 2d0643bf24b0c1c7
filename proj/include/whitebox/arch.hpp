#ifndef WHITEBOX_ARCH_HPP_
#define WHITEBOX_ARCH_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace whitebox {

// One costed line of a flat architecture description. The format keeps
// every cost input explicit (input channels and spatial size per line) so
// that branching topologies like residual blocks can be written as a flat
// list and audited without weights:
//
//   # comment
//   conv name=stem cin=3 cout=64 k=7 hin=224 win=224 stride=2 pad=3
//   linear name=fc din=2048 dout=1000
//
// maxpool/gap/relu/batchnorm lines are accepted for readability and count
// zero MACs.
struct ArchLayer {
  std::string kind;
  std::string name;
  uint64_t macs = 0;
  std::string detail;  // human-readable cost expansion
};

std::vector<ArchLayer> parse_arch_file(const std::string& path);

uint64_t arch_total_macs(const std::vector<ArchLayer>& layers);

}  // namespace whitebox

#endif  // WHITEBOX_ARCH_HPP_
