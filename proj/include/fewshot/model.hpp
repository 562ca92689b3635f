#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/classifier.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/extractor.hpp"
#include "fewshot/generator.hpp"

namespace fewshot {

// Everything a checkpoint carries: extractor, classifier and generator.
struct Model {
  ExtractorConfig extractor_config;
  ExtractorParams extractor;
  ClassifierState classifier;
  GeneratorParams generator;
  // Last completed training stage (0 = untrained).
  int stage = 0;

  // Deep copy; the copy shares no storage with the original.
  Model clone() const;
};

Model init_model(const ExtractorConfig& extractor_config, std::size_t base_categories, HeadKind head,
                 GeneratorMode mode, std::uint64_t seed);

// Inference-time features of every example, one [count x d] array per
// category, computed with dropout off.
using FeatureTable = std::vector<std::vector<double>>;

FeatureTable compute_features(const Dataset& dataset, const Model& model);

// Features of the listed examples stacked into a [refs x d] constant tensor.
Tensor gather_features(const FeatureTable& table, std::size_t feature_dim,
                       std::span<const ExampleRef> refs);

// Order-sensitive FNV-1a hash over the raw bytes of the extractor parameters.
std::uint64_t extractor_checksum(const ExtractorParams& params);

}  // namespace fewshot
