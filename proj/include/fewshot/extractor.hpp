#pragma once

#include <cstddef>
#include <vector>

#include "fewshot/rng.hpp"
#include "fewshot/tape.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

struct ExtractorConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t feature_dim = 32;
  // Cosine models drop the ReLU after the last layer so features can take
  // either sign.
  bool use_final_relu = false;
  // Dropout on the output feature vector, training only.
  double dropout_p = 0.0;

  void validate() const;
  // input_dim, hidden_dims..., feature_dim
  std::vector<std::size_t> layer_dims() const;
};

// One weight [out x in] and bias [out] per layer.
struct ExtractorParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::vector<Tensor> tensors() const;
};

// Weights ~ N(0, 1/fan_in), biases zero.
ExtractorParams init_extractor(const ExtractorConfig& config, Rng& rng);

// Maps x [input_dim] or [batch x input_dim] to features [d] or [batch x d].
// `dropout_rng` is only consulted when training with dropout_p > 0.
Tensor extract(Tape& tape, const Tensor& x, const ExtractorParams& params,
               const ExtractorConfig& config, bool train = false, Rng* dropout_rng = nullptr);

}  // namespace fewshot
