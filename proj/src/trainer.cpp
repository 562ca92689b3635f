#include "fewshot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace fewshot {
namespace {

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Tensor stack_inputs(const Dataset& dataset, std::span<const ExampleRef> refs) {
  std::vector<double> values;
  values.reserve(refs.size() * dataset.input_dim());
  for (const ExampleRef& r : refs) {
    const auto x = dataset.example(r.category, r.example);
    values.insert(values.end(), x.begin(), x.end());
  }
  return Tensor({refs.size(), dataset.input_dim()}, std::move(values));
}

std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(i);
  return out;
}

}  // namespace

std::size_t Stage2Config::max_shots() const {
  if (shots.empty()) throw std::invalid_argument("stage 2: shot set is empty");
  return *std::max_element(shots.begin(), shots.end());
}

TrainHistory stage1_train(const Dataset& dataset, const BaseViews& views, Model& model,
                          const Stage1Config& config, std::uint64_t seed) {
  std::vector<ExampleRef> pool;
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < views.train.size(); ++b) {
    for (std::size_t idx : views.train[b]) {
      pool.push_back({views.base_categories[b], idx});
      labels.push_back(b);
    }
  }
  if (pool.empty()) throw std::invalid_argument("stage 1: empty training set");
  if (config.batch_size == 0) throw std::invalid_argument("stage 1: batch_size must be positive");
  if (model.classifier.base_count() != views.train.size()) {
    throw std::invalid_argument("stage 1: model has " + std::to_string(model.classifier.base_count()) +
                                " base rows for " + std::to_string(views.train.size()) + " categories");
  }

  SgdOptimizer optimizer(concat(model.extractor.tensors(), model.classifier.trainable_tensors()),
                         config.sgd);
  Rng batch_rng = make_rng(seed, streams::kStage1Batches);
  Rng dropout_rng = make_rng(seed, streams::kStage1Dropout);
  const auto decay_epoch = static_cast<std::size_t>(std::floor(config.decay_at * static_cast<double>(config.epochs)));

  TrainHistory history;
  std::vector<ExampleRef> batch;
  std::vector<std::size_t> batch_labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    optimizer.set_lr(epoch >= decay_epoch ? config.sgd.lr * config.lr_decay : config.sgd.lr);
    const auto order = sample_without_replacement(pool.size(), pool.size(), batch_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(pool[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      Tape tape;
      const Tensor features = extract(tape, stack_inputs(dataset, batch), model.extractor,
                                      model.extractor_config, true, &dropout_rng);
      const Tensor scores = head_scores(tape, features, model.classifier.w_base, model.classifier.head,
                                        model.classifier.tau);
      const Tensor loss = tape.cross_entropy(tape.softmax(scores), batch_labels);
      tape.backward(loss);
      optimizer.step();
      loss_sum += loss.item();
      ++batches;
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  // The generator's keys start from the trained base weights.
  model.generator = init_generator(model.classifier.w_base, model.generator.mode);
  model.stage = std::max(model.stage, 1);
  return history;
}

Episode sample_episode(const BaseViews& views, const Stage2Config& config, Rng& rng) {
  const std::size_t base_count = views.train.size();
  if (config.k_novel == 0 || config.k_novel >= base_count) {
    throw std::invalid_argument("episode: need 0 < k_novel < K_base, got k_novel=" +
                                std::to_string(config.k_novel) + " with K_base=" + std::to_string(base_count));
  }
  const std::size_t max_shots = config.max_shots();
  for (std::size_t s : config.shots) {
    if (s == 0) throw std::invalid_argument("episode: shot counts must be positive");
  }
  for (std::size_t b = 0; b < base_count; ++b) {
    if (views.train[b].size() < max_shots + config.queries_per_novel) {
      throw std::invalid_argument("episode: base category " + std::to_string(views.base_categories[b]) +
                                  " has " + std::to_string(views.train[b].size()) +
                                  " training examples, needs at least " +
                                  std::to_string(max_shots + config.queries_per_novel));
    }
  }

  Episode ep;
  ep.fake_novel = sample_without_replacement(base_count, config.k_novel, rng);
  ep.shots = config.shots[std::uniform_int_distribution<std::size_t>(0, config.shots.size() - 1)(rng)];
  ep.excluded.assign(base_count, false);
  for (std::size_t b : ep.fake_novel) ep.excluded[b] = true;

  for (std::size_t slot = 0; slot < ep.fake_novel.size(); ++slot) {
    const std::size_t b = ep.fake_novel[slot];
    const auto& pool = views.train[b];
    const auto picks = sample_without_replacement(pool.size(), ep.shots + config.queries_per_novel, rng);
    std::vector<ExampleRef> support;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const ExampleRef ref{views.base_categories[b], pool[picks[i]]};
      if (i < ep.shots) {
        support.push_back(ref);
      } else {
        ep.query_novel.push_back(ref);
        ep.query_novel_slot.push_back(slot);
      }
    }
    ep.support.push_back(std::move(support));
  }

  std::vector<std::size_t> remaining;
  std::size_t available = 0;
  for (std::size_t b = 0; b < base_count; ++b) {
    if (!ep.excluded[b]) {
      remaining.push_back(b);
      available += views.train[b].size();
    }
  }
  const std::size_t wanted = config.base_query_count();
  if (wanted > available) {
    throw std::invalid_argument("episode: " + std::to_string(wanted) + " base queries requested but only " +
                                std::to_string(available) + " examples remain");
  }
  std::set<ExampleRef> taken;
  std::uniform_int_distribution<std::size_t> pick_label(0, remaining.size() - 1);
  while (ep.query_base.size() < wanted) {
    const std::size_t b = remaining[pick_label(rng)];
    const auto& pool = views.train[b];
    const ExampleRef ref{views.base_categories[b],
                         pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]};
    if (!taken.insert(ref).second) continue;
    ep.query_base.push_back(ref);
    ep.query_base_label.push_back(b);
  }
  return ep;
}

std::string check_episode(const Episode& ep, const BaseViews& views, const Stage2Config& config) {
  const std::size_t base_count = views.train.size();
  auto in_pool = [&](std::size_t label, const ExampleRef& ref) {
    if (label >= base_count || ref.category != views.base_categories[label]) return false;
    const auto& pool = views.train[label];
    return std::find(pool.begin(), pool.end(), ref.example) != pool.end();
  };
  if (ep.fake_novel.size() != config.k_novel) return "wrong number of fake-novel categories";
  for (std::size_t i = 0; i < ep.fake_novel.size(); ++i) {
    if (ep.fake_novel[i] >= base_count) return "fake-novel label out of range";
    for (std::size_t j = 0; j < i; ++j) {
      if (ep.fake_novel[i] == ep.fake_novel[j]) return "fake-novel categories repeat";
    }
  }
  if (std::find(config.shots.begin(), config.shots.end(), ep.shots) == config.shots.end()) {
    return "shot count not in the configured set";
  }
  if (ep.excluded.size() != base_count) return "exclusion mask has the wrong length";
  for (std::size_t b = 0; b < base_count; ++b) {
    const bool is_fake = std::find(ep.fake_novel.begin(), ep.fake_novel.end(), b) != ep.fake_novel.end();
    if (ep.excluded[b] != is_fake) return "exclusion mask differs from the fake-novel set at row " + std::to_string(b);
  }
  if (ep.support.size() != ep.fake_novel.size()) return "support list size mismatch";
  for (std::size_t slot = 0; slot < ep.support.size(); ++slot) {
    if (ep.support[slot].size() != ep.shots) return "support set has the wrong size";
    for (const ExampleRef& s : ep.support[slot]) {
      if (!in_pool(ep.fake_novel[slot], s)) return "support example outside its category's training pool";
      for (const ExampleRef& q : ep.query_novel) {
        if (q == s) return "support and novel query sets overlap";
      }
    }
  }
  if (ep.query_novel.size() != config.k_novel * config.queries_per_novel ||
      ep.query_novel_slot.size() != ep.query_novel.size()) {
    return "wrong number of novel queries";
  }
  for (std::size_t i = 0; i < ep.query_novel.size(); ++i) {
    const std::size_t slot = ep.query_novel_slot[i];
    if (slot >= ep.fake_novel.size() || !in_pool(ep.fake_novel[slot], ep.query_novel[i])) {
      return "novel query does not belong to its fake-novel category";
    }
  }
  if (ep.query_base.size() != config.base_query_count() || ep.query_base_label.size() != ep.query_base.size()) {
    return "wrong number of base queries";
  }
  for (std::size_t i = 0; i < ep.query_base.size(); ++i) {
    const std::size_t label = ep.query_base_label[i];
    if (label >= base_count || ep.excluded[label]) return "base query drawn from a fake-novel category";
    if (!in_pool(label, ep.query_base[i])) return "base query outside its category's training pool";
  }
  return {};
}

Tensor episode_loss(Tape& tape, const Episode& episode, const FeatureFn& features, const Model& model,
                    const EpisodeLossOptions& options) {
  std::vector<ExampleRef> refs;
  for (const auto& s : episode.support) refs.insert(refs.end(), s.begin(), s.end());
  const std::size_t support_total = refs.size();
  refs.insert(refs.end(), episode.query_novel.begin(), episode.query_novel.end());
  refs.insert(refs.end(), episode.query_base.begin(), episode.query_base.end());
  if (refs.size() == support_total) throw std::invalid_argument("episode_loss: episode has no queries");

  Tensor feats = features(tape, refs);
  if (options.train && options.dropout_p > 0.0) {
    if (options.dropout_rng == nullptr) throw std::invalid_argument("episode_loss: dropout needs an rng");
    feats = tape.dropout(feats, options.dropout_p, *options.dropout_rng, true);
  }

  const ClassifierState& cls = model.classifier;
  std::vector<Tensor> generated;
  std::size_t offset = 0;
  if (options.traces != nullptr) options.traces->clear();
  for (const auto& s : episode.support) {
    const auto rows = iota_indices(offset, offset + s.size());
    offset += s.size();
    AttentionTrace trace;
    generated.push_back(generate(tape, tape.gather_rows(feats, rows), cls.w_base, model.generator,
                                 episode.excluded, options.traces ? &trace : nullptr));
    if (options.traces != nullptr) options.traces->push_back(std::move(trace));
  }

  std::vector<std::size_t> remaining;
  std::vector<std::size_t> position(cls.base_count(), 0);
  for (std::size_t b = 0; b < cls.base_count(); ++b) {
    if (!episode.excluded[b]) {
      position[b] = remaining.size();
      remaining.push_back(b);
    }
  }
  std::vector<Tensor> parts;
  if (!remaining.empty()) parts.push_back(tape.gather_rows(cls.w_base, remaining));
  parts.insert(parts.end(), generated.begin(), generated.end());
  const Tensor weights = tape.concat_rows(parts);

  std::vector<std::size_t> labels;
  for (std::size_t slot : episode.query_novel_slot) labels.push_back(remaining.size() + slot);
  for (std::size_t b : episode.query_base_label) labels.push_back(position[b]);
  const Tensor queries = tape.gather_rows(feats, iota_indices(support_total, refs.size()));
  const Tensor probs = tape.softmax(head_scores(tape, queries, weights, cls.head, cls.tau));
  return tape.cross_entropy(probs, labels);
}

FeatureFn extractor_features(const Dataset& dataset, const Model& model) {
  return [&dataset, &model](Tape& tape, std::span<const ExampleRef> refs) {
    return extract(tape, stack_inputs(dataset, refs), model.extractor, model.extractor_config, false);
  };
}

FeatureFn table_features(const FeatureTable& table, std::size_t feature_dim) {
  return [&table, feature_dim](Tape&, std::span<const ExampleRef> refs) {
    return gather_features(table, feature_dim, refs);
  };
}

TrainHistory stage2_train(const Dataset& dataset, const BaseViews& views, Model& model,
                          const Stage2Config& config, std::uint64_t seed) {
  if (model.stage < 1) throw std::invalid_argument("stage 2 needs a stage-1 trained model");
  if (config.episodes_per_batch == 0) throw std::invalid_argument("stage 2: episodes_per_batch must be positive");
  if (model.generator.keys.rows() != model.classifier.base_count()) {
    throw std::invalid_argument("stage 2: generator keys do not match the base weights");
  }
  // The extractor is frozen, so features are computed once.
  const FeatureTable table = compute_features(dataset, model);
  const FeatureFn features = table_features(table, model.extractor_config.feature_dim);

  // W_base keeps training, but on its own (smaller) step size.
  std::vector<Tensor> head_params = model.generator.trainable_tensors();
  for (const Tensor& t : model.classifier.trainable_tensors()) {
    if (!t.same_storage(model.classifier.w_base)) head_params.push_back(t);
  }
  SgdOptimizer optimizer(head_params, config.sgd);
  SgdConfig base_sgd = config.sgd;
  base_sgd.lr *= config.base_lr_scale;
  SgdOptimizer base_optimizer({model.classifier.w_base}, base_sgd);
  Rng episode_rng = make_rng(seed, streams::kStage2Episodes);
  Rng dropout_rng = make_rng(seed, streams::kStage2Dropout);
  EpisodeLossOptions options{true, config.feature_dropout, &dropout_rng, nullptr};

  const std::size_t batches = std::max<std::size_t>(1, config.episodes_per_epoch / config.episodes_per_batch);
  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      Tape tape;
      Tensor total;
      for (std::size_t e = 0; e < config.episodes_per_batch; ++e) {
        const Episode ep = sample_episode(views, config, episode_rng);
        const Tensor loss = episode_loss(tape, ep, features, model, options);
        total = total.defined() ? tape.add(total, loss) : loss;
      }
      const Tensor mean = tape.scale(total, 1.0 / static_cast<double>(config.episodes_per_batch));
      tape.backward(mean);
      optimizer.step();
      base_optimizer.step();
      loss_sum += mean.item();
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  model.stage = 2;
  return history;
}

double episode_novel_accuracy(const Dataset& dataset, const BaseViews& views, const Model& model,
                              const Stage2Config& config, std::size_t episodes, std::uint64_t seed) {
  const FeatureTable table = compute_features(dataset, model);
  const std::size_t d = model.extractor_config.feature_dim;
  Rng rng = make_rng(seed, streams::kStage2Episodes, 1);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < episodes; ++i) {
    const Episode ep = sample_episode(views, config, rng);
    Tape tape;
    std::vector<Tensor> rows;
    for (const auto& s : ep.support) {
      rows.push_back(generate(tape, gather_features(table, d, s), model.classifier.w_base, model.generator,
                              ep.excluded));
    }
    const Tensor weights = tape.concat_rows(rows);
    const Tensor scores = head_scores(tape, gather_features(table, d, ep.query_novel), weights,
                                      model.classifier.head, model.classifier.tau);
    const auto predicted = argmax_rows(scores);
    for (std::size_t q = 0; q < predicted.size(); ++q) {
      correct += predicted[q] == ep.query_novel_slot[q] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace fewshot
