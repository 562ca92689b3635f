#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/generator.hpp"
#include "fewshot/model.hpp"
#include "fewshot/optimizer.hpp"

namespace fewshot {

struct Stage1Config {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  SgdConfig sgd{0.1, 0.9, 5e-4};
  // The learning rate drops by lr_decay once this fraction of epochs is done.
  double decay_at = 2.0 / 3.0;
  double lr_decay = 0.1;
};

struct Stage2Config {
  std::size_t epochs = 20;
  std::size_t episodes_per_epoch = 200;
  std::size_t episodes_per_batch = 8;
  SgdConfig sgd{0.03, 0.9, 5e-4};
  // W_base steps use lr * base_lr_scale.
  double base_lr_scale = 0.1;
  // Dropout on every episode feature (support and queries).
  double feature_dropout = 0.5;
  std::size_t k_novel = 5;
  // N' is drawn uniformly from this set for each episode.
  std::vector<std::size_t> shots = {1, 5};
  std::size_t queries_per_novel = 6;
  // Total base queries per episode; 0 means k_novel * queries_per_novel.
  std::size_t base_queries = 0;

  std::size_t base_query_count() const {
    return base_queries == 0 ? k_novel * queries_per_novel : base_queries;
  }
  std::size_t max_shots() const;
};

struct TrainHistory {
  // Mean loss per epoch.
  std::vector<double> epoch_loss;
};

// Stage 1: trains the extractor, the base weights and (cosine head) tau on
// plain classification of the base categories, using the training pool of
// `views`. Updates `model` in place.
TrainHistory stage1_train(const Dataset& dataset, const BaseViews& views, Model& model,
                          const Stage1Config& config, std::uint64_t seed);

// One stage-2 training episode. Base categories are addressed by base label
// (row of W_base); examples by (dataset category, example index).
struct Episode {
  std::vector<std::size_t> fake_novel;            // base labels, distinct
  std::vector<std::vector<ExampleRef>> support;   // N' examples per fake-novel category
  std::vector<ExampleRef> query_novel;
  std::vector<std::size_t> query_novel_slot;      // index into fake_novel
  std::vector<ExampleRef> query_base;
  std::vector<std::size_t> query_base_label;      // base label
  std::vector<bool> excluded;                     // true exactly on fake_novel
  std::size_t shots = 0;
};

Episode sample_episode(const BaseViews& views, const Stage2Config& config, Rng& rng);

// Returns a description of the first broken episode invariant, or an empty
// string. Independent of the sampler.
std::string check_episode(const Episode& episode, const BaseViews& views, const Stage2Config& config);

struct EpisodeLossOptions {
  bool train = false;
  double dropout_p = 0.0;
  Rng* dropout_rng = nullptr;
  // When set, receives one trace per fake-novel category.
  std::vector<AttentionTrace>* traces = nullptr;
};

// Provides features [refs x d] for a list of examples on the given tape.
using FeatureFn = std::function<Tensor(Tape&, std::span<const ExampleRef>)>;

// Cross-entropy of all episode queries against the unified weights
// W* = [remaining base rows ; generated fake-novel rows].
Tensor episode_loss(Tape& tape, const Episode& episode, const FeatureFn& features, const Model& model,
                    const EpisodeLossOptions& options = {});

// Feature function that runs the extractor on the tape (gradients reach theta).
FeatureFn extractor_features(const Dataset& dataset, const Model& model);
// Feature function backed by a precomputed table (theta frozen).
FeatureFn table_features(const FeatureTable& table, std::size_t feature_dim);

// Stage 2: trains the generator, the base weights and tau on fake-novel
// episodes with the extractor frozen.
TrainHistory stage2_train(const Dataset& dataset, const BaseViews& views, Model& model,
                          const Stage2Config& config, std::uint64_t seed);

// Accuracy of the fake-novel queries over `episodes` held-out episodes,
// scored against the generated rows only.
double episode_novel_accuracy(const Dataset& dataset, const BaseViews& views, const Model& model,
                              const Stage2Config& config, std::size_t episodes, std::uint64_t seed);

}  // namespace fewshot
