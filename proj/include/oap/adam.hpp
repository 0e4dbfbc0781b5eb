#pragma once

#include <vector>

#include "oap/tensor.hpp"

namespace oap {

// Adam with bias correction. Moments persist across steps; parameters are
// updated in place from their gradient slots.
class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f,
       float beta2 = 0.999f, float eps = 1e-8f);

  void step();
  void zero_grad();
  int64_t steps_taken() const { return t_; }
  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace oap
