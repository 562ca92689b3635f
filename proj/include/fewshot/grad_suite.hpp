#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fewshot {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  double tolerance = 1e-4;
  double step = 1e-5;
  // Op whose adjoint is corrupted on every tape (empty for none).
  std::string fault_op;
};

struct GradCheckEntry {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Finite-difference check of every differentiable tape op plus the model
// functions built on them (extractor, classifier heads, weight generator and
// the end-to-end episode loss).
std::vector<GradCheckEntry> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace fewshot
