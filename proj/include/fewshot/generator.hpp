#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fewshot/tape.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class GeneratorMode { kAvgOnly, kAvgPlusAttention };

std::string_view to_string(GeneratorMode mode);
GeneratorMode parse_generator_mode(std::string_view text);

inline constexpr double kInitialAttentionScale = 10.0;

// Learnable state of the few-shot weight generator.
struct GeneratorParams {
  Tensor phi_avg;  // [d]
  Tensor phi_att;  // [d]
  Tensor phi_q;    // [d x d], query projection
  Tensor keys;     // [K_base x d], one key per base category
  Tensor gamma;    // scalar attention sharpness
  GeneratorMode mode = GeneratorMode::kAvgPlusAttention;

  // Parameters that influence generate() in the current mode.
  std::vector<Tensor> trainable_tensors() const;
};

// Starts as a pure feature-averaging generator: phi_avg = 1, phi_att = 0,
// phi_q = I, keys = normalized copies of the base weights, gamma = 10.
GeneratorParams init_generator(const Tensor& w_base, GeneratorMode mode);

// Records what the attention memory held for one call.
struct AttentionTrace {
  std::vector<std::size_t> memory_rows;
  // [support x memory] attention coefficients, row-major.
  std::vector<double> coefficients;
};

// Mean of the l2-normalized support features. support is [N x d] or [d].
Tensor avg_weight(Tape& tape, const Tensor& support);

// Attention over the normalized base weights. `excluded` is empty or has
// one flag per base row; flagged rows are removed from both the values and
// the keys before the softmax.
Tensor attention_weight(Tape& tape, const Tensor& support, const Tensor& w_base,
                        const GeneratorParams& params, const std::vector<bool>& excluded = {},
                        AttentionTrace* trace = nullptr);

// phi_avg * w_avg, plus phi_att * w_att in attention mode.
Tensor generate(Tape& tape, const Tensor& support, const Tensor& w_base,
                const GeneratorParams& params, const std::vector<bool>& excluded = {},
                AttentionTrace* trace = nullptr);

}  // namespace fewshot
