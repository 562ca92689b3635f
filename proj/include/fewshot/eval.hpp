#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/model.hpp"

namespace fewshot {

struct FewShotTask {
  std::vector<std::size_t> novel_categories;     // dataset category ids
  std::vector<std::vector<ExampleRef>> support;  // N' per novel category
  std::vector<ExampleRef> test_novel;
  std::vector<std::size_t> test_novel_slot;      // index into novel_categories
  std::vector<ExampleRef> test_base;
  std::vector<std::size_t> test_base_label;      // base label (row of W_base)
};

struct TaskConfig {
  Split split = Split::kTestNovel;
  std::size_t k_novel = 5;
  std::size_t shots = 1;
  std::size_t test_per_novel = 15;
  // Total base test examples; 0 means k_novel * test_per_novel.
  std::size_t base_test_total = 0;

  std::size_t base_test_count() const { return base_test_total == 0 ? k_novel * test_per_novel : base_test_total; }
};

// Base test examples are drawn from views.test (the held-out base pool).
FewShotTask sample_task(const Dataset& dataset, const BaseViews& views, const TaskConfig& config, Rng& rng);

// Description of the first broken task invariant, or empty.
std::string check_task(const FewShotTask& task, const Dataset& dataset, const BaseViews& views,
                       const TaskConfig& config);

// Accuracies of one task; a metric is absent when its test set is empty.
struct TaskScores {
  std::optional<double> novel;  // novel queries vs the novel rows only
  std::optional<double> base;   // base queries vs the base rows only
  std::optional<double> both;   // all queries vs every row
};

TaskScores evaluate_task(const FewShotTask& task, const FeatureTable& features, const Model& model);

struct MetricSummary {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample stddev / sqrt(count)
  std::size_t count = 0;
  bool operator==(const MetricSummary&) const = default;
};

MetricSummary summarize(std::span<const double> values);

struct MetricsReport {
  MetricSummary novel, base, both;
  std::size_t tasks = 0;
  TaskConfig config;
  std::uint64_t seed = 0;
  bool operator==(const MetricsReport& o) const {
    return novel == o.novel && base == o.base && both == o.both && tasks == o.tasks && seed == o.seed &&
           config.split == o.config.split && config.k_novel == o.config.k_novel &&
           config.shots == o.config.shots && config.test_per_novel == o.config.test_per_novel &&
           config.base_test_count() == o.config.base_test_count();
  }
};

// Aggregates per-task scores in task order.
MetricsReport aggregate(std::span<const TaskScores> scores, const TaskConfig& config, std::uint64_t seed);

struct EvalOptions {
  std::size_t tasks = 500;
  std::uint64_t seed = 0;
  // Run tasks on OpenMP threads; the report is identical either way.
  bool parallel = true;
};

// Task i is sampled from its own stream derived from (seed, i).
MetricsReport evaluate(const Dataset& dataset, const BaseViews& views, const Model& model,
                       const TaskConfig& config, const EvalOptions& options);

// Canonical structured-text form (JSON, fixed field order).
std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

}  // namespace fewshot
