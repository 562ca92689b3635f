#include "fewshot/pipeline.hpp"

#include "json.hpp"

#include "fewshot/rng.hpp"

namespace fewshot {

BaseViews make_base_views(const Dataset& dataset, std::size_t holdout) {
  Rng rng = make_rng(dataset.metadata().seed, streams::kHoldout);
  return base_holdout_split(dataset, holdout, rng);
}

Model init_run_model(const Dataset& dataset, const RunConfig& config) {
  return init_model(config.extractor_config(dataset.input_dim()), dataset.categories(Split::kBase).size(),
                    config.head, config.generator, config.seed);
}

TrainHistory run_stage1(const Dataset& dataset, const RunConfig& config, Model& model) {
  const BaseViews views = make_base_views(dataset, config.base_holdout);
  return stage1_train(dataset, views, model, config.stage1, config.seed);
}

TrainHistory run_stage2(const Dataset& dataset, const RunConfig& config, Model& model) {
  if (model.generator.mode != config.generator) {
    // A stage-1 generator is still at its initial state, so switching mode
    // loses nothing; a trained one would be silently discarded.
    if (model.stage != 1) {
      throw ConfigError("model.generator is " + std::string(to_string(config.generator)) +
                        " but the checkpoint's generator was trained as " +
                        std::string(to_string(model.generator.mode)));
    }
    model.generator = init_generator(model.classifier.w_base, config.generator);
  }
  const BaseViews views = make_base_views(dataset, config.base_holdout);
  return stage2_train(dataset, views, model, config.stage2, config.seed);
}

MetricsReport run_eval(const Dataset& dataset, const RunConfig& config, const Model& model, bool parallel) {
  const BaseViews views = make_base_views(dataset, config.base_holdout);
  EvalOptions options;
  options.tasks = config.eval_tasks;
  options.seed = config.seed;
  options.parallel = parallel;
  return evaluate(dataset, views, model, config.task, options);
}

std::string loss_log(int stage, const TrainHistory& history) {
  std::string out;
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["epoch"] = e;
    j["loss"] = history.epoch_loss[e];
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace fewshot
