#include "fewshot/optimizer.hpp"

#include <stdexcept>

namespace fewshot {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  velocity_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.trainable()) throw std::invalid_argument("SgdOptimizer: parameter is not trainable");
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error("sgd step: parameter " + std::to_string(i) + " of shape " +
                             to_string(params_[i].shape()) + " has no gradient");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto values = p.mutable_values();
    auto grad = p.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      v[j] = config_.momentum * v[j] + grad[j] + config_.weight_decay * values[j];
      values[j] -= config_.lr * v[j];
    }
    p.clear_grad();
  }
}

}  // namespace fewshot
