#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "fewshot/rng.hpp"

namespace fewshot {

enum class Split : std::uint8_t { kBase = 0, kValNovel = 1, kTestNovel = 2 };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SynthConfig {
  std::size_t base_categories = 64;
  std::size_t val_categories = 16;
  std::size_t test_categories = 20;
  std::size_t examples_per_category = 60;
  std::size_t input_dim = 32;
  double center_scale = 1.0;
  double noise_scale = 0.15;
  double nuisance_strength = 1.0;
  // Category hierarchy: category c belongs to superclass c mod superclasses
  // and its center direction is sqrt(share) * superclass direction +
  // sqrt(1 - share) * its own, so siblings have cosine ~ share. Related base
  // categories are what the attention memory can exploit. 0 disables it.
  std::size_t superclasses = 16;
  double superclass_share = 0.7;
  // Part of the nuisance: each latent example is scaled by
  // exp(amplitude_jitter * N(0, 1)) before the nuisance map, a per-example
  // contrast change that carries no category information.
  double amplitude_jitter = 1.4;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_categories() const { return base_categories + val_categories + test_categories; }
  bool operator==(const SynthConfig&) const = default;
};

// (category, example) address of one input vector.
struct ExampleRef {
  std::size_t category = 0;
  std::size_t example = 0;
  bool operator==(const ExampleRef&) const = default;
  auto operator<=>(const ExampleRef&) const = default;
};

// Per-category input vectors plus the base/val/test partition of categories.
// Categories are numbered base first, then validation, then test.
class Dataset {
 public:
  Dataset() = default;
  Dataset(SynthConfig metadata, std::size_t input_dim, std::vector<Split> splits,
          std::vector<std::vector<double>> examples);

  const SynthConfig& metadata() const { return metadata_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t category_count() const { return splits_.size(); }
  Split split_of(std::size_t category) const { return splits_.at(category); }
  std::vector<std::size_t> categories(Split split) const;

  std::size_t example_count(std::size_t category) const;
  std::span<const double> example(std::size_t category, std::size_t index) const;
  std::span<const double> category_values(std::size_t category) const { return examples_.at(category); }

  bool operator==(const Dataset&) const = default;

 private:
  SynthConfig metadata_;
  std::size_t input_dim_ = 0;
  std::vector<Split> splits_;
  std::vector<std::vector<double>> examples_;  // [count x input_dim] per category
};

// Latent (pre-nuisance) draw: unit-direction centers scaled by center_scale,
// plus isotropic Gaussian noise. Center directions are independent unless
// superclasses are enabled.
struct LatentData {
  std::vector<std::vector<double>> centers;   // [input_dim] per category
  std::vector<std::vector<double>> examples;  // [count x input_dim] per category
};

LatentData generate_latent(const SynthConfig& config);

// Fixed invertible nonlinear map applied to every latent example: a random
// rotation, two additive coupling layers of strength `nuisance_strength`,
// and a second rotation. Strength 0 leaves an orthogonal map.
class NuisanceMap {
 public:
  NuisanceMap(std::size_t dim, double strength, Rng& rng);
  std::vector<double> forward(std::span<const double> x) const;
  std::vector<double> inverse(std::span<const double> y) const;

 private:
  std::size_t dim_, half_;
  double strength_;
  std::vector<double> rot_in_, rot_out_;  // [dim x dim] orthogonal
  std::vector<double> couple_a_;          // [(dim - half) x half]
  std::vector<double> couple_b_;          // [half x (dim - half)]
};

Dataset generate_dataset(const SynthConfig& config);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Per-category partition of the base examples into a training pool and a
// held-out pool used to score base categories at evaluation time. Index b
// refers to the b-th base category (its base label).
struct BaseViews {
  std::vector<std::size_t> base_categories;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> test;
};

BaseViews base_holdout_split(const Dataset& dataset, std::size_t per_category_holdout, Rng& rng);

// Draws `count` distinct values from [0, n) uniformly (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng);

}  // namespace fewshot
