#pragma once

#include <vector>

#include "coldgraph/tensor.hpp"

namespace coldgraph {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of tensors updated in place.
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<Tensor*> params);
  // grads[i] must match params[i] in shape.
  void step(const std::vector<const Tensor*>& grads);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace coldgraph
