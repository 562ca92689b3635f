#include "fewshot/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace fewshot {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += " x ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool trainable) {
  if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end()) {
    throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " +
                     std::to_string(element_count(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  storage_ = std::make_shared<detail::TensorStorage>();
  storage_->shape = std::move(shape);
  storage_->values = std::move(values);
  storage_->trainable = trainable;
  storage_->requires_grad = trainable;
}

Tensor Tensor::zeros(Shape shape, bool trainable) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), trainable);
}

Tensor Tensor::scalar(double value, bool trainable) { return Tensor({1}, {value}, trainable); }

std::size_t Tensor::rows() const {
  switch (rank()) {
    case 1: return 1;
    case 2: return shape()[0];
    default: throw ShapeError("matrix view needs rank 1 or 2, got " + to_string(shape()));
  }
}

std::size_t Tensor::cols() const { return rank() == 1 ? shape()[0] : shape()[1]; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return storage_->values[0];
}

void Tensor::zero_grad() { storage_->grad.assign(storage_->values.size(), 0.0); }

Tensor Tensor::clone() const {
  Tensor out(shape(), storage_->values, storage_->trainable);
  out.storage_->grad = storage_->grad;
  return out;
}

Tensor Tensor::detach() const { return Tensor(shape(), storage_->values, false); }

}  // namespace fewshot
