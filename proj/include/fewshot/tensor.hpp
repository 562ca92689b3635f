#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fewshot {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool trainable = false;
  bool requires_grad = false;
  const Tape* tape = nullptr;  // producing tape, null for leaves
  std::size_t node_id = 0;
};

}  // namespace detail

// Dense row-major array of doubles. Copies share storage (handle semantics);
// use clone() for a deep copy. Rank-1 tensors act as a single row wherever an
// operation works row-wise.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool trainable = false);

  static Tensor zeros(Shape shape, bool trainable = false);
  static Tensor scalar(double value, bool trainable = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t size() const { return storage_->values.size(); }
  // Matrix view: rank-1 [n] is 1 x n, rank-2 [m, n] is m x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return storage_->values; }
  std::span<double> mutable_values() { return storage_->values; }
  double operator[](std::size_t i) const { return storage_->values[i]; }
  double item() const;

  bool trainable() const { return storage_->trainable; }
  bool requires_grad() const { return storage_->requires_grad; }
  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const double> grad() const { return storage_->grad; }
  std::span<double> mutable_grad() { return storage_->grad; }
  void zero_grad();
  void clear_grad() { storage_->grad.clear(); }

  // Deep copy that keeps the trainable flag; detach() drops it.
  Tensor clone() const;
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorStorage> storage) : storage_(std::move(storage)) {}

  std::shared_ptr<detail::TensorStorage> storage_;
};

}  // namespace fewshot
