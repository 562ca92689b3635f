#pragma once

#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// SGD with heavy-ball momentum and L2 weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Gradients are cleared after each step.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig config);

  // Throws std::logic_error if a parameter has no gradient.
  void step();

  void set_lr(double lr) { config_.lr = lr; }
  const SgdConfig& config() const { return config_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

}  // namespace fewshot
