#include "fewshot/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fewshot {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Tensor probe = x.detach();
  std::vector<double> grad(x.size());
  auto v = probe.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double up = f(probe);
    v[i] = orig - h;
    const double down = f(probe);
    v[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

double check_gradients(const std::function<Tensor(Tape&)>& loss_fn, std::span<Tensor> params,
                       double h, const std::function<void(Tape&)>& configure) {
  for (Tensor& p : params) p.clear_grad();
  {
    Tape tape;
    if (configure) configure(tape);
    tape.backward(loss_fn(tape));
  }
  auto evaluate = [&loss_fn]() {
    Tape tape;
    return loss_fn(tape).item();
  };
  double worst = 0.0;
  for (Tensor& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    std::vector<double> numeric(p.size());
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = evaluate();
      v[i] = orig - h;
      const double down = evaluate();
      v[i] = orig;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, max_relative_error(analytic, numeric));
    p.clear_grad();
  }
  return worst;
}

}  // namespace fewshot
