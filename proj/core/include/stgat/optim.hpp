#pragma once

#include <cstddef>
#include <vector>

#include "stgat/tensor.hpp"

namespace stgat::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // classic L2: wd * param added to the gradient
};

// Adam with per-parameter moment state. Updates are deterministic; a
// non-finite gradient aborts the run rather than poisoning the moments.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();
  std::size_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  AdamConfig cfg_;
};

}  // namespace stgat::ad
