#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fewshot/tape.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

// |a - b| / max(|a|, |b|, floor), maximised over coordinates.
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6);

// Builds a scalar loss on a fresh tape from `params` (which must be trainable
// leaves), runs backward, then perturbs each parameter value in place to get
// the finite-difference gradient. Returns the worst relative error over all
// parameters. Parameter values are restored and gradients cleared on return.
double check_gradients(const std::function<Tensor(Tape&)>& loss_fn, std::span<Tensor> params,
                       double h = 1e-5, const std::function<void(Tape&)>& configure = {});

}  // namespace fewshot
