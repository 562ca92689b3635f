#include "fewshot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace fewshot {
namespace {

constexpr int kReportVersion = 1;

using nlohmann::ordered_json;

struct Tally {
  std::size_t correct = 0, total = 0;
  void add(bool ok) {
    correct += ok ? 1 : 0;
    ++total;
  }
  std::optional<double> rate() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }
};

ordered_json summary_json(const MetricSummary& m) {
  ordered_json j;
  j["mean"] = m.mean;
  j["ci95"] = m.ci95;
  j["count"] = m.count;
  return j;
}

MetricSummary summary_from(const ordered_json& j) {
  return MetricSummary{j.at("mean").get<double>(), j.at("ci95").get<double>(), j.at("count").get<std::size_t>()};
}

}  // namespace

FewShotTask sample_task(const Dataset& dataset, const BaseViews& views, const TaskConfig& config, Rng& rng) {
  const auto pool = dataset.categories(config.split);
  if (config.k_novel == 0 || config.k_novel > pool.size()) {
    throw std::invalid_argument("task: split " + std::string(to_string(config.split)) + " has " +
                                std::to_string(pool.size()) + " categories, cannot draw " +
                                std::to_string(config.k_novel));
  }
  if (config.shots == 0) throw std::invalid_argument("task: shots must be positive");

  FewShotTask task;
  for (std::size_t i : sample_without_replacement(pool.size(), config.k_novel, rng)) {
    task.novel_categories.push_back(pool[i]);
  }
  for (std::size_t slot = 0; slot < task.novel_categories.size(); ++slot) {
    const std::size_t c = task.novel_categories[slot];
    const std::size_t n = dataset.example_count(c);
    if (n < config.shots + config.test_per_novel) {
      throw std::invalid_argument("task: category " + std::to_string(c) + " has " + std::to_string(n) +
                                  " examples, needs " + std::to_string(config.shots + config.test_per_novel));
    }
    const auto picks = sample_without_replacement(n, config.shots + config.test_per_novel, rng);
    std::vector<ExampleRef> support;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      if (i < config.shots) {
        support.push_back({c, picks[i]});
      } else {
        task.test_novel.push_back({c, picks[i]});
        task.test_novel_slot.push_back(slot);
      }
    }
    task.support.push_back(std::move(support));
  }

  const std::size_t wanted = config.base_test_count();
  std::size_t available = 0;
  for (const auto& t : views.test) available += t.size();
  if (wanted > available) {
    throw std::invalid_argument("task: " + std::to_string(wanted) + " base test examples requested, " +
                                std::to_string(available) + " held out");
  }
  std::vector<ExampleRef> flat;
  std::vector<std::size_t> flat_label;
  for (std::size_t b = 0; b < views.test.size(); ++b) {
    for (std::size_t idx : views.test[b]) {
      flat.push_back({views.base_categories[b], idx});
      flat_label.push_back(b);
    }
  }
  for (std::size_t i : sample_without_replacement(flat.size(), wanted, rng)) {
    task.test_base.push_back(flat[i]);
    task.test_base_label.push_back(flat_label[i]);
  }
  return task;
}

std::string check_task(const FewShotTask& task, const Dataset& dataset, const BaseViews& views,
                       const TaskConfig& config) {
  if (task.novel_categories.size() != config.k_novel) return "wrong number of novel categories";
  std::set<std::size_t> novel(task.novel_categories.begin(), task.novel_categories.end());
  if (novel.size() != task.novel_categories.size()) return "novel categories repeat";
  for (std::size_t c : novel) {
    if (c >= dataset.category_count() || dataset.split_of(c) != config.split) return "novel category outside the split";
  }
  if (task.support.size() != config.k_novel) return "support list size mismatch";
  std::set<ExampleRef> support;
  for (std::size_t slot = 0; slot < task.support.size(); ++slot) {
    if (task.support[slot].size() != config.shots) return "support set has the wrong size";
    for (const ExampleRef& r : task.support[slot]) {
      if (r.category != task.novel_categories[slot]) return "support example from the wrong category";
      if (r.example >= dataset.example_count(r.category)) return "support example index out of range";
      if (!support.insert(r).second) return "support example repeats";
    }
  }
  if (task.test_novel.size() != config.k_novel * config.test_per_novel) return "wrong number of novel tests";
  std::set<ExampleRef> seen;
  for (std::size_t i = 0; i < task.test_novel.size(); ++i) {
    const ExampleRef& r = task.test_novel[i];
    if (support.count(r) != 0) return "novel test example is also a support example";
    if (!seen.insert(r).second) return "novel test example repeats";
    if (task.test_novel_slot[i] >= config.k_novel || task.novel_categories[task.test_novel_slot[i]] != r.category) {
      return "novel test example has the wrong label";
    }
  }
  if (task.test_base.size() != config.base_test_count()) return "wrong number of base tests";
  for (std::size_t i = 0; i < task.test_base.size(); ++i) {
    const ExampleRef& r = task.test_base[i];
    const std::size_t label = task.test_base_label[i];
    if (novel.count(r.category) != 0) return "base test example from a novel category";
    if (label >= views.base_categories.size() || views.base_categories[label] != r.category) {
      return "base test example has the wrong label";
    }
    const auto& held = views.test[label];
    if (std::find(held.begin(), held.end(), r.example) == held.end()) return "base test example not in the held-out pool";
    if (!seen.insert(r).second) return "base test example repeats";
  }
  return {};
}

TaskScores evaluate_task(const FewShotTask& task, const FeatureTable& features, const Model& model) {
  const ClassifierState& cls = model.classifier;
  const std::size_t d = cls.feature_dim();
  const std::size_t base_count = cls.base_count();
  Tape tape;
  std::vector<Tensor> rows;
  for (const auto& s : task.support) {
    rows.push_back(generate(tape, gather_features(features, d, s), cls.w_base, model.generator));
  }
  const Tensor w_novel = tape.concat_rows(rows);
  const Tensor parts[] = {cls.w_base, w_novel};
  const Tensor w_all = tape.concat_rows(parts);

  Tally novel, base, both;
  if (!task.test_novel.empty()) {
    const Tensor z = gather_features(features, d, task.test_novel);
    const auto own = argmax_rows(head_scores(tape, z, w_novel, cls.head, cls.tau));
    const auto all = argmax_rows(head_scores(tape, z, w_all, cls.head, cls.tau));
    for (std::size_t i = 0; i < own.size(); ++i) {
      novel.add(own[i] == task.test_novel_slot[i]);
      both.add(all[i] == base_count + task.test_novel_slot[i]);
    }
  }
  if (!task.test_base.empty()) {
    const Tensor z = gather_features(features, d, task.test_base);
    const auto own = argmax_rows(head_scores(tape, z, cls.w_base, cls.head, cls.tau));
    const auto all = argmax_rows(head_scores(tape, z, w_all, cls.head, cls.tau));
    for (std::size_t i = 0; i < own.size(); ++i) {
      base.add(own[i] == task.test_base_label[i]);
      both.add(all[i] == task.test_base_label[i]);
    }
  }
  return TaskScores{novel.rate(), base.rate(), both.rate()};
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary out;
  out.count = values.size();
  if (values.empty()) return out;
  double total = 0.0;
  for (double v : values) total += v;
  out.mean = total / static_cast<double>(values.size());
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  out.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
  return out;
}

MetricsReport aggregate(std::span<const TaskScores> scores, const TaskConfig& config, std::uint64_t seed) {
  std::vector<double> novel, base, both;
  for (const TaskScores& s : scores) {
    if (s.novel) novel.push_back(*s.novel);
    if (s.base) base.push_back(*s.base);
    if (s.both) both.push_back(*s.both);
  }
  MetricsReport report;
  report.novel = summarize(novel);
  report.base = summarize(base);
  report.both = summarize(both);
  report.tasks = scores.size();
  report.config = config;
  report.seed = seed;
  return report;
}

MetricsReport evaluate(const Dataset& dataset, const BaseViews& views, const Model& model,
                       const TaskConfig& config, const EvalOptions& options) {
  if (options.tasks < 2) throw std::invalid_argument("evaluate: need at least 2 tasks");
  const FeatureTable features = compute_features(dataset, model);
  std::vector<TaskScores> scores(options.tasks);
  const auto count = static_cast<std::ptrdiff_t>(options.tasks);
  // Tasks are independent: each has its own rng stream and result slot.
#pragma omp parallel for schedule(dynamic, 8) if (options.parallel)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    Rng rng = make_rng(options.seed, streams::kEvalTasks, static_cast<std::uint64_t>(i));
    const FewShotTask task = sample_task(dataset, views, config, rng);
    scores[static_cast<std::size_t>(i)] = evaluate_task(task, features, model);
  }
  return aggregate(scores, config, options.seed);
}

std::string to_json(const MetricsReport& report) {
  ordered_json j;
  j["format"] = "fewshot-metrics";
  j["version"] = kReportVersion;
  j["tasks"] = report.tasks;
  j["seed"] = report.seed;
  j["split"] = std::string(to_string(report.config.split));
  j["k_novel"] = report.config.k_novel;
  j["shots"] = report.config.shots;
  j["test_per_novel"] = report.config.test_per_novel;
  j["base_test_total"] = report.config.base_test_count();
  j["novel"] = summary_json(report.novel);
  j["base"] = summary_json(report.base);
  j["both"] = summary_json(report.both);
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  if (j.at("format").get<std::string>() != "fewshot-metrics") throw std::invalid_argument("not a metrics report");
  if (j.at("version").get<int>() != kReportVersion) {
    throw std::invalid_argument("unsupported metrics report version " + std::to_string(j.at("version").get<int>()));
  }
  MetricsReport r;
  r.tasks = j.at("tasks").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config.split = parse_split(j.at("split").get<std::string>());
  r.config.k_novel = j.at("k_novel").get<std::size_t>();
  r.config.shots = j.at("shots").get<std::size_t>();
  r.config.test_per_novel = j.at("test_per_novel").get<std::size_t>();
  r.config.base_test_total = j.at("base_test_total").get<std::size_t>();
  r.novel = summary_from(j.at("novel"));
  r.base = summary_from(j.at("base"));
  r.both = summary_from(j.at("both"));
  return r;
}

}  // namespace fewshot
