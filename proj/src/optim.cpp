#include "whitebox/optim.hpp"

namespace whitebox {

void SgdOptimizer::register_param(Tensor* param, bool decay) {
  Slot slot;
  slot.param = param;
  slot.velocity.assign(static_cast<size_t>(param->numel()), 0.0f);
  slot.decay = decay;
  slots_.push_back(std::move(slot));
}

void SgdOptimizer::step() {
  for (Slot& slot : slots_) {
    Tensor& p = *slot.param;
    const auto& g = p.grad();
    if (g.size() != slot.velocity.size()) {
      throw_shape("sgd_step: gradient/momentum size mismatch");
    }
    const float wd = slot.decay ? weight_decay_ : 0.0f;
    for (size_t i = 0; i < slot.velocity.size(); ++i) {
      float v = momentum_ * slot.velocity[i] + g[i] +
                wd * p[static_cast<int64_t>(i)];
      slot.velocity[i] = v;
      p[static_cast<int64_t>(i)] -= lr_ * v;
    }
  }
}

}  // namespace whitebox
