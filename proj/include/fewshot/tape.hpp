#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

inline constexpr double kNormEps = 1e-12;
inline constexpr double kLogEps = 1e-12;

// Define-by-run reverse-mode tape. Each operation computes its output eagerly
// and appends a node; backward() walks the nodes in reverse order once.
//
// A tape is confined to one thread. Leaf tensors (parameters) may be used on
// several tapes in turn; their gradients accumulate across backward() calls
// until cleared, normally by sgd_step().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // a[m x k] * b[k x n]. A rank-1 `a` is one row and gives a rank-1 result.
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a[m x k] * b[n x k]^T, same rank-1 rule for `a`.
  Tensor matmul_nt(const Tensor& a, const Tensor& b);

  Tensor add(const Tensor& a, const Tensor& b);
  // Adds bias[n] to every row of a[m x n].
  Tensor add_bias(const Tensor& a, const Tensor& bias);
  Tensor hadamard(const Tensor& a, const Tensor& b);
  // Multiplies every row of a[m x n] elementwise by v[n].
  Tensor hadamard_rows(const Tensor& a, const Tensor& v);
  Tensor scale(const Tensor& a, double c);
  // s * a for a one-element tensor s; differentiable in both.
  Tensor scale_by(const Tensor& a, const Tensor& s);
  Tensor relu(const Tensor& a);
  Tensor sum(const Tensor& a);
  // Mean over rows: [m x n] -> [n].
  Tensor mean_rows(const Tensor& a);
  // Inverted dropout. Returns `a` itself when !train or p == 0.
  Tensor dropout(const Tensor& a, double p, Rng& rng, bool train);

  // Row-wise x / max(||x||, eps).
  Tensor l2_normalize(const Tensor& a, double eps = kNormEps);
  // Row-wise softmax.
  Tensor softmax(const Tensor& logits);
  // Mean over rows of -log(p[r, y_r] + kLogEps).
  Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

  // Stacks the rows of every part (rank-1 parts count as one row).
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::string_view op_at(std::size_t node_id) const { return nodes_.at(node_id).op; }

  // Test hook: scales the incoming adjoint of every node of the named op by
  // (1 + 1e-2), so gradient checks can prove they detect a broken adjoint.
  void inject_adjoint_fault(std::string op) { fault_op_ = std::move(op); }

  // Names of all differentiable ops, as recorded in nodes.
  static std::span<const std::string_view> op_names();

 private:
  using Storage = detail::TensorStorage;
  using Backward = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    std::string_view op;
    std::shared_ptr<Storage> output;
    Backward backward;
  };

  Tensor record(std::string_view op, Shape shape, std::vector<double> values,
                std::vector<const Tensor*> inputs, Backward backward);
  void note_leaf(const Tensor& t);

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<Storage>> leaves_;
  std::optional<std::string> fault_op_;
};

}  // namespace fewshot
