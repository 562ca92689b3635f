#include "fewshot/model.hpp"

#include <bit>
#include <cstring>

namespace fewshot {
namespace {

std::vector<Tensor> clone_all(const std::vector<Tensor>& ts) {
  std::vector<Tensor> out;
  out.reserve(ts.size());
  for (const Tensor& t : ts) out.push_back(t.clone());
  return out;
}

}  // namespace

Model Model::clone() const {
  Model out;
  out.extractor_config = extractor_config;
  out.extractor.weights = clone_all(extractor.weights);
  out.extractor.biases = clone_all(extractor.biases);
  out.classifier.w_base = classifier.w_base.clone();
  if (classifier.w_novel) out.classifier.w_novel = classifier.w_novel->clone();
  out.classifier.tau = classifier.tau.clone();
  out.classifier.head = classifier.head;
  out.generator = GeneratorParams{generator.phi_avg.clone(), generator.phi_att.clone(),
                                  generator.phi_q.clone(),   generator.keys.clone(),
                                  generator.gamma.clone(),   generator.mode};
  out.stage = stage;
  return out;
}

Model init_model(const ExtractorConfig& extractor_config, std::size_t base_categories, HeadKind head,
                 GeneratorMode mode, std::uint64_t seed) {
  Model model;
  model.extractor_config = extractor_config;
  Rng extractor_rng = make_rng(seed, streams::kExtractorInit);
  model.extractor = init_extractor(extractor_config, extractor_rng);
  Rng classifier_rng = make_rng(seed, streams::kClassifierInit);
  model.classifier = init_classifier(base_categories, extractor_config.feature_dim, head, classifier_rng);
  model.generator = init_generator(model.classifier.w_base, mode);
  return model;
}

FeatureTable compute_features(const Dataset& dataset, const Model& model) {
  ExtractorParams frozen;
  for (const Tensor& w : model.extractor.weights) frozen.weights.push_back(w.detach());
  for (const Tensor& b : model.extractor.biases) frozen.biases.push_back(b.detach());

  FeatureTable table(dataset.category_count());
  for (std::size_t c = 0; c < dataset.category_count(); ++c) {
    const auto values = dataset.category_values(c);
    if (values.empty()) continue;
    Tape tape;
    const Tensor inputs({dataset.example_count(c), dataset.input_dim()},
                        std::vector<double>(values.begin(), values.end()));
    const Tensor features = extract(tape, inputs, frozen, model.extractor_config, false);
    table[c].assign(features.values().begin(), features.values().end());
  }
  return table;
}

Tensor gather_features(const FeatureTable& table, std::size_t feature_dim,
                       std::span<const ExampleRef> refs) {
  std::vector<double> out;
  out.reserve(refs.size() * feature_dim);
  for (const ExampleRef& r : refs) {
    const auto& cat = table.at(r.category);
    const std::size_t offset = r.example * feature_dim;
    if (offset + feature_dim > cat.size()) {
      throw std::out_of_range("gather_features: example " + std::to_string(r.example) +
                              " of category " + std::to_string(r.category));
    }
    out.insert(out.end(), cat.begin() + static_cast<std::ptrdiff_t>(offset),
               cat.begin() + static_cast<std::ptrdiff_t>(offset + feature_dim));
  }
  return Tensor({refs.size(), feature_dim}, std::move(out));
}

std::uint64_t extractor_checksum(const ExtractorParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& t : params.tensors()) {
    for (double v : t.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace fewshot
