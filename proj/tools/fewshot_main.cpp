// fewshot: command-line driver. See README.md for the workflow.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fewshot/binary_io.hpp"
#include "fewshot/checkpoint.hpp"
#include "fewshot/config.hpp"
#include "fewshot/grad_suite.hpp"
#include "fewshot/pipeline.hpp"

using namespace fewshot;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kCheck = 4 };

constexpr int kFeatureDumpVersion = 1;

// A failed verification, as opposed to a crash.
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--config", common.config_path, "key = value config file");
  sub->add_flag("--quiet", common.quiet, "do not echo the resolved config");
  sub->allow_extras();
  sub->footer("Any config key can be overridden as --key value or --key=value, e.g. --stage2.lr 0.01");
}

// Leftover `--key value` / `--key=value` tokens become config overrides.
void apply_overrides(RunConfig& config, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& token = extras[i];
    if (token.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + token + "'");
    std::string key = token.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("option --" + key + " needs a value");
      value = extras[++i];
    }
    config.set(key, value);
  }
}

RunConfig resolve(const Common& common, const CLI::App* sub) {
  RunConfig config;
  if (!common.config_path.empty()) apply_config_file(config, common.config_path);
  apply_overrides(config, sub->remaining());
  config.validate();
  if (!common.quiet) {
    std::istringstream lines(to_text(config));
    for (std::string line; std::getline(lines, line);) std::cerr << "# " << line << "\n";
  }
  return config;
}

int cmd_gen_data(const RunConfig& config, const std::string& out) {
  const Dataset dataset = generate_dataset(config.data);
  save_dataset(dataset, out);
  std::size_t examples = 0;
  for (std::size_t c = 0; c < dataset.category_count(); ++c) examples += dataset.example_count(c);
  std::printf("wrote %s\n", out.c_str());
  std::printf("seed %llu  input_dim %zu  examples %zu\n", static_cast<unsigned long long>(config.data.seed),
              dataset.input_dim(), examples);
  for (Split s : {Split::kBase, Split::kValNovel, Split::kTestNovel}) {
    std::printf("%-10s %zu categories\n", std::string(to_string(s)).c_str(), dataset.categories(s).size());
  }
  return kOk;
}

int cmd_train(const RunConfig& config, int stage, const std::string& data_path, const std::string& ckpt_in,
              const std::string& ckpt_out, const std::string& log_path) {
  if (stage == 2 && ckpt_in.empty()) throw ConfigError("train --stage 2 requires --ckpt-in (a stage-1 checkpoint)");
  const Dataset dataset = load_dataset(data_path);
  Model model;
  if (stage == 1) {
    if (!ckpt_in.empty()) throw ConfigError("train --stage 1 starts from scratch; drop --ckpt-in");
    model = init_run_model(dataset, config);
  } else {
    model = load_checkpoint(ckpt_in);
    if (model.stage != 1) {
      throw ConfigError("train --stage 2 needs a stage-1 checkpoint; " + ckpt_in + " is at stage " +
                        std::to_string(model.stage));
    }
  }
  const TrainHistory history = stage == 1 ? run_stage1(dataset, config, model) : run_stage2(dataset, config, model);
  save_checkpoint(model, ckpt_out);
  const std::string log = loss_log(stage, history);
  if (!log_path.empty()) write_file(log_path, log);
  std::cout << log;
  std::printf("wrote %s (stage %d, extractor checksum %016llx)\n", ckpt_out.c_str(), model.stage,
              static_cast<unsigned long long>(extractor_checksum(model.extractor)));
  return kOk;
}

int cmd_eval(const RunConfig& config, const std::string& data_path, const std::string& ckpt,
             const std::string& out) {
  const Model model = load_checkpoint(ckpt);
  const Dataset dataset = load_dataset(data_path);
  const std::string report = to_json(run_eval(dataset, config, model));
  if (!out.empty()) write_file(out, report);
  std::cout << report;
  return kOk;
}

int cmd_grad_check(const RunConfig& config, const std::string& corrupt_op) {
  GradSuiteOptions options = config.grad;
  options.seed = config.seed;
  options.fault_op = corrupt_op;
  const auto entries = run_gradient_suite(options);
  bool ok = true;
  for (const GradCheckEntry& e : entries) {
    std::printf("%-4s %-22s instances %3zu  max rel error %.3e\n", e.passed ? "ok" : "FAIL", e.name.c_str(),
                e.instances, e.max_rel_error);
    ok = ok && e.passed;
  }
  std::printf("%zu entries, tolerance %.1e: %s\n", entries.size(), options.tolerance, ok ? "all passed" : "FAILED");
  if (!ok) throw CheckFailure("gradient check failed");
  return kOk;
}

int cmd_dump_features(const std::string& data_path, const std::string& ckpt, Split split, const std::string& out) {
  const Model model = load_checkpoint(ckpt);
  const Dataset dataset = load_dataset(data_path);
  const FeatureTable table = compute_features(dataset, model);
  const std::size_t d = model.extractor_config.feature_dim;
  const bool normalize = model.classifier.head == HeadKind::kCosine;
  const auto categories = dataset.categories(split);

  std::size_t rows = 0;
  for (std::size_t c : categories) rows += dataset.example_count(c);
  std::string text = "# fewshot-features version " + std::to_string(kFeatureDumpVersion) + " split " +
                     std::string(to_string(split)) + " rows " + std::to_string(rows) + " dim " + std::to_string(d) +
                     " normalized " + (normalize ? "1" : "0") + "\n";
  char buf[32];
  for (std::size_t c : categories) {
    for (std::size_t i = 0; i < dataset.example_count(c); ++i) {
      const double* z = table[c].data() + i * d;
      double norm = 1.0;
      if (normalize) {
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) sq += z[k] * z[k];
        norm = std::sqrt(sq + 1e-12);
      }
      text += std::to_string(c) + " " + std::to_string(i);
      for (std::size_t k = 0; k < d; ++k) {
        std::snprintf(buf, sizeof buf, " %.17g", z[k] / norm);
        text += buf;
      }
      text += "\n";
    }
  }
  write_file(out, text);
  std::printf("wrote %zu rows of dim %zu to %s\n", rows, d, out.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot learning without forgetting: synthetic benchmark driver"};
  app.require_subcommand(1);
  Common common;

  std::string out, data, ckpt, ckpt_in, ckpt_out, log, split = "test_novel", corrupt_op;
  int stage = 1;
  std::size_t tasks = 0, shots = 0;

  auto* gen = app.add_subcommand("gen-data", "generate and save a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "dataset file")->required();

  auto* train = app.add_subcommand("train", "run training stage 1 or 2");
  add_common(train, common);
  train->add_option("--stage", stage, "1: feature extractor + base classifier, 2: weight generator")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--data", data, "dataset file")->required();
  train->add_option("--ckpt-in", ckpt_in, "stage-1 checkpoint (stage 2 only)");
  train->add_option("--ckpt-out", ckpt_out, "checkpoint to write")->required();
  train->add_option("--log", log, "loss log (JSON lines)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on sampled few-shot tasks");
  add_common(eval, common);
  eval->add_option("--data", data, "dataset file")->required();
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--tasks", tasks, "number of tasks (eval.tasks)");
  eval->add_option("--shots", shots, "examples per novel category (eval.shots)");
  eval->add_option("--out", out, "metrics report file");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of every differentiable op");
  add_common(grad, common);
  grad->add_option("--corrupt-op", corrupt_op, "")->group("");  // test hook

  auto* dump = app.add_subcommand("dump-features", "export per-example features of one split");
  add_common(dump, common);
  dump->add_option("--data", data, "dataset file")->required();
  dump->add_option("--ckpt", ckpt, "checkpoint")->required();
  dump->add_option("--split", split, "base, val_novel or test_novel");
  dump->add_option("--out", out, "feature dump file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(resolve(common, gen), out);
    if (train->parsed()) return cmd_train(resolve(common, train), stage, data, ckpt_in, ckpt_out, log);
    if (eval->parsed()) {
      RunConfig config = resolve(common, eval);
      if (tasks > 0) config.eval_tasks = tasks;
      if (shots > 0) config.task.shots = shots;
      config.validate();
      return cmd_eval(config, data, ckpt, out);
    }
    if (grad->parsed()) return cmd_grad_check(resolve(common, grad), corrupt_op);
    if (dump->parsed()) {
      resolve(common, dump);
      Split s;
      try {
        s = parse_split(split);
      } catch (const std::invalid_argument&) {
        throw ConfigError("--split must be base, val_novel or test_novel, got '" + split + "'");
      }
      return cmd_dump_features(data, ckpt, s, out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return kCheck;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
