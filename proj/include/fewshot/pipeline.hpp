#pragma once

#include <string>

#include "fewshot/config.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/eval.hpp"
#include "fewshot/model.hpp"
#include "fewshot/trainer.hpp"

// Glue between a RunConfig and the library: the steps the command-line tool
// runs, usable from tests without going through files.
namespace fewshot {

// The holdout partition is keyed by the dataset's own seed, so training and
// evaluation of the same dataset always agree on it.
BaseViews make_base_views(const Dataset& dataset, std::size_t holdout);

// Fresh model shaped for `dataset` (input_dim and base count).
Model init_run_model(const Dataset& dataset, const RunConfig& config);

TrainHistory run_stage1(const Dataset& dataset, const RunConfig& config, Model& model);
// The generator mode of `config` decides which generator stage 2 trains.
TrainHistory run_stage2(const Dataset& dataset, const RunConfig& config, Model& model);

MetricsReport run_eval(const Dataset& dataset, const RunConfig& config, const Model& model,
                       bool parallel = true);

// One JSON object per epoch: {"stage":s,"epoch":e,"loss":l}.
std::string loss_log(int stage, const TrainHistory& history);

}  // namespace fewshot
