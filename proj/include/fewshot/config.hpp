#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fewshot/classifier.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/eval.hpp"
#include "fewshot/extractor.hpp"
#include "fewshot/generator.hpp"
#include "fewshot/grad_suite.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

// Unknown key, malformed value, or a value outside its valid range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every tunable of a run. All randomness derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;

  SynthConfig data;  // data.seed is kept equal to seed
  // Examples per base category held out to score base accuracy.
  std::size_t base_holdout = 15;

  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t feature_dim = 32;
  HeadKind head = HeadKind::kCosine;
  // Unset: on for the dot head, off for the cosine head.
  std::optional<bool> final_relu;
  double dropout = 0.0;
  GeneratorMode generator = GeneratorMode::kAvgPlusAttention;

  Stage1Config stage1;
  Stage2Config stage2;

  TaskConfig task;
  std::size_t eval_tasks = 500;

  GradSuiteOptions grad;

  ExtractorConfig extractor_config(std::size_t input_dim) const;
  // Range checks that need no dataset; throws ConfigError.
  void validate() const;

  // Sets one key from its text form; throws ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string_view> keys();
};

// key = value lines; '#' starts a comment; blank lines are skipped.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view source);
// Throws IoError if the file cannot be read.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

// Canonical key = value form of every setting, in keys() order.
std::string to_text(const RunConfig& config);

}  // namespace fewshot
