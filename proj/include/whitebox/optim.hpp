#ifndef WHITEBOX_OPTIM_HPP_
#define WHITEBOX_OPTIM_HPP_

#include <vector>

#include "whitebox/tensor.hpp"

namespace whitebox {

// SGD with momentum and coupled L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Parameters registered with decay=false (the class-wise masks) skip the
// weight-decay term.
class SgdOptimizer {
 public:
  SgdOptimizer(float lr, float momentum, float weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void register_param(Tensor* param, bool decay = true);

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

  // One update over every registered parameter using its grad buffer.
  void step();

 private:
  struct Slot {
    Tensor* param;
    std::vector<float> velocity;
    bool decay;
  };

  float lr_, momentum_, weight_decay_;
  std::vector<Slot> slots_;
};

}  // namespace whitebox

#endif  // WHITEBOX_OPTIM_HPP_
