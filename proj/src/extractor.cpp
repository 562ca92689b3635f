#include "fewshot/extractor.hpp"

#include <cmath>
#include <stdexcept>

namespace fewshot {

void ExtractorConfig::validate() const {
  if (input_dim == 0 || feature_dim == 0) {
    throw std::invalid_argument("extractor: input_dim and feature_dim must be positive");
  }
  if (hidden_dims.empty()) throw std::invalid_argument("extractor: hidden_dims must not be empty");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("extractor: hidden dims must be positive");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
    throw std::invalid_argument("extractor: dropout_p must lie in [0, 1)");
  }
}

std::vector<std::size_t> ExtractorConfig::layer_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(feature_dim);
  return dims;
}

std::vector<Tensor> ExtractorParams::tensors() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

ExtractorParams init_extractor(const ExtractorConfig& config, Rng& rng) {
  config.validate();
  const auto dims = config.layer_dims();
  ExtractorParams params;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i], fan_out = dims[i + 1];
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = normal(rng);
    params.weights.emplace_back(Shape{fan_out, fan_in}, std::move(w), true);
    params.biases.push_back(Tensor::zeros({fan_out}, true));
  }
  return params;
}

Tensor extract(Tape& tape, const Tensor& x, const ExtractorParams& params,
               const ExtractorConfig& config, bool train, Rng* dropout_rng) {
  if (x.cols() != config.input_dim || x.rank() > 2) {
    throw ShapeError("extract: input " + to_string(x.shape()) + " does not match input_dim " +
                     std::to_string(config.input_dim));
  }
  Tensor h = x;
  const std::size_t layers = params.weights.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = tape.add_bias(tape.matmul_nt(h, params.weights[i]), params.biases[i]);
    if (i + 1 < layers || config.use_final_relu) h = tape.relu(h);
  }
  if (train && config.dropout_p > 0.0) {
    if (dropout_rng == nullptr) throw std::invalid_argument("extract: dropout needs an rng");
    h = tape.dropout(h, config.dropout_p, *dropout_rng, true);
  }
  return h;
}

}  // namespace fewshot
