#include "fewshot/generator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fewshot {

std::string_view to_string(GeneratorMode mode) {
  return mode == GeneratorMode::kAvgOnly ? "avg_only" : "avg_plus_attention";
}

GeneratorMode parse_generator_mode(std::string_view text) {
  if (text == "avg_only") return GeneratorMode::kAvgOnly;
  if (text == "avg_plus_attention") return GeneratorMode::kAvgPlusAttention;
  throw std::invalid_argument("unknown generator mode '" + std::string(text) +
                              "' (expected avg_only or avg_plus_attention)");
}

std::vector<Tensor> GeneratorParams::trainable_tensors() const {
  if (mode == GeneratorMode::kAvgOnly) return {phi_avg};
  return {phi_avg, phi_att, phi_q, keys, gamma};
}

GeneratorParams init_generator(const Tensor& w_base, GeneratorMode mode) {
  const std::size_t k = w_base.rows(), d = w_base.cols();
  std::vector<double> identity(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) identity[i * d + i] = 1.0;

  std::vector<double> keys(w_base.values().begin(), w_base.values().end());
  for (std::size_t r = 0; r < k; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += keys[r * d + j] * keys[r * d + j];
    const double denom = std::max(std::sqrt(ss), kNormEps);
    for (std::size_t j = 0; j < d; ++j) keys[r * d + j] /= denom;
  }
  return GeneratorParams{Tensor({d}, std::vector<double>(d, 1.0), true),
                         Tensor::zeros({d}, true),
                         Tensor({d, d}, std::move(identity), true),
                         Tensor({k, d}, std::move(keys), true),
                         Tensor::scalar(kInitialAttentionScale, true),
                         mode};
}

Tensor avg_weight(Tape& tape, const Tensor& support) {
  if (!support.defined() || support.size() == 0) {
    throw std::invalid_argument("avg_weight: empty support set");
  }
  return tape.mean_rows(tape.l2_normalize(support));
}

Tensor attention_weight(Tape& tape, const Tensor& support, const Tensor& w_base,
                        const GeneratorParams& params, const std::vector<bool>& excluded,
                        AttentionTrace* trace) {
  if (!support.defined() || support.size() == 0) {
    throw std::invalid_argument("attention_weight: empty support set");
  }
  const std::size_t base_count = w_base.rows();
  if (params.keys.rows() != base_count) {
    throw ShapeError("attention_weight: " + std::to_string(params.keys.rows()) + " keys for " +
                     std::to_string(base_count) + " base categories");
  }
  if (!excluded.empty() && excluded.size() != base_count) {
    throw ShapeError("attention_weight: exclusion mask has " + std::to_string(excluded.size()) +
                     " entries for " + std::to_string(base_count) + " base categories");
  }

  std::vector<std::size_t> memory_rows;
  for (std::size_t b = 0; b < base_count; ++b) {
    if (excluded.empty() || !excluded[b]) memory_rows.push_back(b);
  }
  if (memory_rows.empty()) throw std::invalid_argument("attention_weight: every base category is masked");

  Tensor values = w_base, keys = params.keys;
  if (memory_rows.size() != base_count) {
    values = tape.gather_rows(w_base, memory_rows);
    keys = tape.gather_rows(params.keys, memory_rows);
  }
  const Tensor queries = tape.matmul_nt(tape.l2_normalize(support), params.phi_q);
  const Tensor similarity = tape.matmul_nt(tape.l2_normalize(queries), tape.l2_normalize(keys));
  const Tensor attention = tape.softmax(tape.scale_by(similarity, params.gamma));
  if (trace != nullptr) {
    trace->memory_rows = memory_rows;
    trace->coefficients.assign(attention.values().begin(), attention.values().end());
  }
  return tape.mean_rows(tape.matmul(attention, tape.l2_normalize(values)));
}

Tensor generate(Tape& tape, const Tensor& support, const Tensor& w_base,
                const GeneratorParams& params, const std::vector<bool>& excluded,
                AttentionTrace* trace) {
  const Tensor from_avg = tape.hadamard(params.phi_avg, avg_weight(tape, support));
  if (params.mode == GeneratorMode::kAvgOnly) return from_avg;
  const Tensor from_att =
      tape.hadamard(params.phi_att, attention_weight(tape, support, w_base, params, excluded, trace));
  return tape.add(from_avg, from_att);
}

}  // namespace fewshot
