#include "fewshot/classifier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fewshot {

std::string_view to_string(HeadKind kind) { return kind == HeadKind::kDot ? "dot" : "cosine"; }

HeadKind parse_head_kind(std::string_view text) {
  if (text == "dot") return HeadKind::kDot;
  if (text == "cosine") return HeadKind::kCosine;
  throw std::invalid_argument("unknown head kind '" + std::string(text) + "' (expected dot or cosine)");
}

std::vector<Tensor> ClassifierState::trainable_tensors() const {
  if (head == HeadKind::kCosine) return {w_base, tau};
  return {w_base};
}

ClassifierState init_classifier(std::size_t base_count, std::size_t feature_dim, HeadKind head,
                                Rng& rng) {
  if (base_count == 0 || feature_dim == 0) {
    throw std::invalid_argument("classifier: need at least one category and one feature");
  }
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  std::vector<double> w(base_count * feature_dim);
  for (double& v : w) v = normal(rng);
  return ClassifierState{Tensor({base_count, feature_dim}, std::move(w), true), std::nullopt,
                         Tensor::scalar(kInitialTemperature, true), head};
}

Tensor dot_scores(Tape& tape, const Tensor& z, const Tensor& weights) {
  return tape.matmul_nt(z, weights);
}

Tensor cosine_scores(Tape& tape, const Tensor& z, const Tensor& weights, const Tensor& tau) {
  if (z.cols() != weights.cols()) {
    throw ShapeError("cosine_scores: feature " + to_string(z.shape()) + " vs weights " +
                     to_string(weights.shape()));
  }
  return tape.scale_by(tape.matmul_nt(tape.l2_normalize(z), tape.l2_normalize(weights)), tau);
}

Tensor head_scores(Tape& tape, const Tensor& z, const Tensor& weights, HeadKind head,
                   const Tensor& tau) {
  return head == HeadKind::kCosine ? cosine_scores(tape, z, weights, tau)
                                   : dot_scores(tape, z, weights);
}

Tensor classify(Tape& tape, const Tensor& z, const ClassifierState& state) {
  if (!state.w_base.defined()) throw std::invalid_argument("classify: no classification weights");
  Tensor weights = state.w_base;
  if (state.w_novel) {
    const Tensor parts[] = {state.w_base, *state.w_novel};
    weights = tape.concat_rows(parts);
  }
  return tape.softmax(head_scores(tape, z, weights, state.head, state.tau));
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  const std::size_t m = scores.rows(), n = scores.cols();
  std::vector<std::size_t> out(m);
  for (std::size_t r = 0; r < m; ++r) out[r] = argmax(scores.values().subspan(r * n, n));
  return out;
}

}  // namespace fewshot
