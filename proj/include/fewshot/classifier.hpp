#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fewshot/rng.hpp"
#include "fewshot/tape.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class HeadKind { kDot, kCosine };

std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

inline constexpr double kInitialTemperature = 10.0;

// Base weights occupy category indices [0, K_base); novel weights, when
// present, follow at [K_base, K_base + K_novel).
struct ClassifierState {
  Tensor w_base;                 // [K_base x d], trainable
  std::optional<Tensor> w_novel;  // [K_novel x d], generated
  Tensor tau;                    // scalar, trainable; unused by the dot head
  HeadKind head = HeadKind::kCosine;

  std::size_t base_count() const { return w_base.rows(); }
  std::size_t feature_dim() const { return w_base.cols(); }
  // Parameters the head actually depends on.
  std::vector<Tensor> trainable_tensors() const;
};

ClassifierState init_classifier(std::size_t base_count, std::size_t feature_dim, HeadKind head,
                                Rng& rng);

// s_k = z^T w_k. z may be [d] or [batch x d].
Tensor dot_scores(Tape& tape, const Tensor& z, const Tensor& weights);
// s_k = tau * cos(z, w_k).
Tensor cosine_scores(Tape& tape, const Tensor& z, const Tensor& weights, const Tensor& tau);
Tensor head_scores(Tape& tape, const Tensor& z, const Tensor& weights, HeadKind head,
                   const Tensor& tau);

// Softmax over the scores of every base and novel category.
Tensor classify(Tape& tape, const Tensor& z, const ClassifierState& state);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Row-wise argmax of a [rows x cols] score matrix.
std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace fewshot
