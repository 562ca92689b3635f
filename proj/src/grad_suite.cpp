#include "fewshot/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <random>

#include "fewshot/classifier.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/extractor.hpp"
#include "fewshot/generator.hpp"
#include "fewshot/grad_check.hpp"
#include "fewshot/model.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {
namespace {

// One instance: fresh trainable leaves plus a loss built from them.
struct Instance {
  std::vector<Tensor> params;
  std::function<Tensor(Tape&)> loss;
};

using Builder = std::function<Instance(Rng&)>;

std::size_t extent(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Values drawn uniformly from [lo, hi] with a random sign when `signed_`.
// Keeping magnitudes away from zero avoids the kinks of relu and l2
// normalization, where central differences are meaningless.
Tensor leaf(Rng& rng, Shape shape, double lo = 0.1, double hi = 1.0, bool signed_ = true) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(n);
  for (double& x : v) x = mag(rng) * (signed_ && sign(rng) ? -1.0 : 1.0);
  return Tensor(std::move(shape), std::move(v), true);
}

// Scalar probe sum(out * r) for a fixed random r, so every output element
// gets a distinct adjoint.
Tensor probe(Tape& tape, const Tensor& out, const Tensor& r) {
  if (out.size() == 1) return tape.scale(out, r[0]);
  const Tensor weights(out.shape(), std::vector<double>(r.values().begin(), r.values().end()));
  return tape.sum(tape.hadamard(out, weights));
}

Tensor weights_like(Rng& rng, const Shape& shape) { return leaf(rng, shape).detach(); }

Shape matrix(Rng& rng, std::size_t cols, bool allow_vector = true) {
  if (allow_vector && std::bernoulli_distribution(0.25)(rng)) return {cols};
  return {extent(rng, 1, 4), cols};
}

Instance unary(Rng& rng, Tensor (*op)(Tape&, const Tensor&), bool positive = false) {
  const Shape shape = matrix(rng, extent(rng, 1, 5));
  Tensor a = leaf(rng, shape, 0.1, 1.0, !positive);
  Tensor r = weights_like(rng, shape);
  return {{a}, [=](Tape& t) { return probe(t, op(t, a), r); }};
}

std::vector<std::pair<std::string, Builder>> op_builders() {
  std::vector<std::pair<std::string, Builder>> b;
  b.emplace_back("matmul", [](Rng& rng) {
    const std::size_t k = extent(rng, 1, 5), n = extent(rng, 1, 5);
    Tensor a = leaf(rng, matrix(rng, k));
    Tensor w = leaf(rng, {k, n});
    Tensor r = weights_like(rng, a.rank() == 1 ? Shape{n} : Shape{a.rows(), n});
    return Instance{{a, w}, [=](Tape& t) { return probe(t, t.matmul(a, w), r); }};
  });
  b.emplace_back("matmul_nt", [](Rng& rng) {
    const std::size_t k = extent(rng, 1, 5), n = extent(rng, 1, 5);
    Tensor a = leaf(rng, matrix(rng, k));
    Tensor w = leaf(rng, {n, k});
    Tensor r = weights_like(rng, a.rank() == 1 ? Shape{n} : Shape{a.rows(), n});
    return Instance{{a, w}, [=](Tape& t) { return probe(t, t.matmul_nt(a, w), r); }};
  });
  b.emplace_back("add", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), y = leaf(rng, s), r = weights_like(rng, s);
    return Instance{{x, y}, [=](Tape& t) { return probe(t, t.add(x, y), r); }};
  });
  b.emplace_back("add_bias", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), bias = leaf(rng, {s.back()}), r = weights_like(rng, s);
    return Instance{{x, bias}, [=](Tape& t) { return probe(t, t.add_bias(x, bias), r); }};
  });
  b.emplace_back("hadamard", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), y = leaf(rng, s), r = weights_like(rng, s);
    return Instance{{x, y}, [=](Tape& t) { return probe(t, t.hadamard(x, y), r); }};
  });
  b.emplace_back("hadamard_rows", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), v = leaf(rng, {s.back()}), r = weights_like(rng, s);
    return Instance{{x, v}, [=](Tape& t) { return probe(t, t.hadamard_rows(x, v), r); }};
  });
  b.emplace_back("scale", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    const double c = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
    Tensor x = leaf(rng, s), r = weights_like(rng, s);
    return Instance{{x}, [=](Tape& t) { return probe(t, t.scale(x, c), r); }};
  });
  b.emplace_back("scale_by", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), c = leaf(rng, {1}), r = weights_like(rng, s);
    return Instance{{x, c}, [=](Tape& t) { return probe(t, t.scale_by(x, c), r); }};
  });
  b.emplace_back("relu", [](Rng& rng) {
    return unary(rng, [](Tape& t, const Tensor& x) { return t.relu(x); });
  });
  b.emplace_back("sum", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s);
    const double c = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    // sum alone has a constant gradient; square first so the check sees x.
    return Instance{{x}, [=](Tape& t) { return t.scale(t.sum(t.hadamard(x, x)), c); }};
  });
  b.emplace_back("mean_rows", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 1, 5));
    Tensor x = leaf(rng, s), r = weights_like(rng, {s.back()});
    return Instance{{x}, [=](Tape& t) { return probe(t, t.mean_rows(x), r); }};
  });
  b.emplace_back("dropout", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 2, 6));
    Tensor x = leaf(rng, s), r = weights_like(rng, s);
    const std::uint64_t mask_seed = rng();
    return Instance{{x}, [=](Tape& t) {
                      Rng mask(mask_seed);  // same mask on every evaluation
                      return probe(t, t.dropout(x, 0.3, mask, true), r);
                    }};
  });
  b.emplace_back("l2_normalize", [](Rng& rng) {
    return unary(rng, [](Tape& t, const Tensor& x) { return t.l2_normalize(x); });
  });
  b.emplace_back("softmax", [](Rng& rng) {
    const Shape s = matrix(rng, extent(rng, 2, 6));
    Tensor x = leaf(rng, s, 0.0, 3.0), r = weights_like(rng, s);
    return Instance{{x}, [=](Tape& t) { return probe(t, t.softmax(x), r); }};
  });
  b.emplace_back("cross_entropy", [](Rng& rng) {
    const std::size_t rows = extent(rng, 1, 4), cols = extent(rng, 2, 5);
    Tensor p = leaf(rng, {rows, cols}, 0.2, 1.0, false);
    std::vector<std::size_t> labels(rows);
    for (auto& y : labels) y = extent(rng, 0, cols - 1);
    return Instance{{p}, [=](Tape& t) { return t.cross_entropy(p, labels); }};
  });
  b.emplace_back("concat_rows", [](Rng& rng) {
    const std::size_t cols = extent(rng, 1, 4), parts = extent(rng, 1, 3);
    std::vector<Tensor> xs;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < parts; ++i) {
      xs.push_back(leaf(rng, matrix(rng, cols)));
      rows += xs.back().rows();
    }
    Tensor r = weights_like(rng, {rows, cols});
    return Instance{xs, [=](Tape& t) { return probe(t, t.concat_rows(xs), r); }};
  });
  b.emplace_back("gather_rows", [](Rng& rng) {
    const std::size_t rows = extent(rng, 1, 4), cols = extent(rng, 1, 4);
    Tensor x = leaf(rng, {rows, cols});
    std::vector<std::size_t> pick(extent(rng, 1, 5));
    for (auto& p : pick) p = extent(rng, 0, rows - 1);  // repeats allowed
    Tensor r = weights_like(rng, {pick.size(), cols});
    return Instance{{x}, [=](Tape& t) { return probe(t, t.gather_rows(x, pick), r); }};
  });
  return b;
}

GeneratorParams random_generator(Rng& rng, std::size_t base, std::size_t d, GeneratorMode mode) {
  GeneratorParams g;
  g.phi_avg = leaf(rng, {d});
  g.phi_att = leaf(rng, {d});
  g.phi_q = leaf(rng, {d, d});
  g.keys = leaf(rng, {base, d});
  g.gamma = leaf(rng, {1}, 0.5, 3.0, false);
  g.mode = mode;
  return g;
}

std::vector<bool> random_exclusion(Rng& rng, std::size_t base) {
  std::vector<bool> excluded(base, false);
  const std::size_t masked = extent(rng, 0, base - 1);  // at least one row stays
  for (std::size_t i : sample_without_replacement(base, masked, rng)) excluded[i] = true;
  return excluded;
}

std::vector<Tensor> generator_tensors(const GeneratorParams& g) {
  return {g.phi_avg, g.phi_att, g.phi_q, g.keys, g.gamma};
}

// Smallest |pre-activation| of any layer over the rows of `inputs`.
double relu_margin(const ExtractorParams& params, const Tensor& inputs) {
  Tape tape;
  Tensor h = inputs.detach();
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    Tensor z = tape.add_bias(tape.matmul_nt(h, params.weights[l].detach()), params.biases[l].detach());
    for (double v : z.values()) margin = std::min(margin, std::abs(v));
    h = tape.relu(z);
  }
  return margin;
}

// Random biases, redrawn along with the weights until no pre-activation sits
// within kKinkMargin of the relu kink for the given inputs.
constexpr double kKinkMargin = 1e-3;

ExtractorParams smooth_extractor(const ExtractorConfig& config, const Tensor& inputs, Rng& rng) {
  for (;;) {
    ExtractorParams params = init_extractor(config, rng);
    for (Tensor& bias : params.biases) {
      for (double& v : bias.mutable_values()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
    }
    if (relu_margin(params, inputs) >= kKinkMargin) return params;
  }
}

std::vector<std::pair<std::string, Builder>> model_builders() {
  std::vector<std::pair<std::string, Builder>> b;
  b.emplace_back("extract", [](Rng& rng) {
    ExtractorConfig config;
    config.input_dim = extent(rng, 2, 5);
    config.hidden_dims = {extent(rng, 2, 6)};
    config.feature_dim = extent(rng, 2, 4);
    config.use_final_relu = std::bernoulli_distribution(0.5)(rng);
    Tensor x = leaf(rng, {extent(rng, 1, 3), config.input_dim});
    ExtractorParams params = smooth_extractor(config, x, rng);
    Tensor r = weights_like(rng, {x.rows(), config.feature_dim});
    std::vector<Tensor> ps = params.tensors();
    ps.push_back(x);
    return Instance{ps, [=](Tape& t) { return probe(t, extract(t, x, params, config), r); }};
  });
  b.emplace_back("dot_scores", [](Rng& rng) {
    const std::size_t d = extent(rng, 2, 5);
    Tensor z = leaf(rng, matrix(rng, d)), w = leaf(rng, {extent(rng, 1, 5), d});
    Tensor r = weights_like(rng, z.rank() == 1 ? Shape{w.rows()} : Shape{z.rows(), w.rows()});
    return Instance{{z, w}, [=](Tape& t) { return probe(t, dot_scores(t, z, w), r); }};
  });
  b.emplace_back("cosine_scores", [](Rng& rng) {
    const std::size_t d = extent(rng, 2, 5);
    Tensor z = leaf(rng, matrix(rng, d)), w = leaf(rng, {extent(rng, 1, 5), d});
    Tensor tau = leaf(rng, {1}, 1.0, 10.0, false);
    Tensor r = weights_like(rng, z.rank() == 1 ? Shape{w.rows()} : Shape{z.rows(), w.rows()});
    return Instance{{z, w, tau}, [=](Tape& t) { return probe(t, cosine_scores(t, z, w, tau), r); }};
  });
  b.emplace_back("avg_weight", [](Rng& rng) {
    const std::size_t d = extent(rng, 2, 5);
    Tensor s = leaf(rng, matrix(rng, d)), r = weights_like(rng, {d});
    return Instance{{s}, [=](Tape& t) { return probe(t, avg_weight(t, s), r); }};
  });
  b.emplace_back("attention_weight", [](Rng& rng) {
    const std::size_t d = extent(rng, 2, 4), base = extent(rng, 1, 5);
    GeneratorParams g = random_generator(rng, base, d, GeneratorMode::kAvgPlusAttention);
    Tensor s = leaf(rng, matrix(rng, d)), w = leaf(rng, {base, d}), r = weights_like(rng, {d});
    const std::vector<bool> excluded = random_exclusion(rng, base);
    std::vector<Tensor> ps = {g.phi_q, g.keys, g.gamma, s, w};
    return Instance{ps, [=](Tape& t) { return probe(t, attention_weight(t, s, w, g, excluded), r); }};
  });
  b.emplace_back("generate", [](Rng& rng) {
    const std::size_t d = extent(rng, 2, 4), base = extent(rng, 1, 5);
    GeneratorParams g = random_generator(rng, base, d, GeneratorMode::kAvgPlusAttention);
    Tensor s = leaf(rng, matrix(rng, d)), w = leaf(rng, {base, d}), r = weights_like(rng, {d});
    const std::vector<bool> excluded = random_exclusion(rng, base);
    std::vector<Tensor> ps = generator_tensors(g);
    ps.push_back(s);
    ps.push_back(w);
    return Instance{ps, [=](Tape& t) { return probe(t, generate(t, s, w, g, excluded), r); }};
  });
  return b;
}

// End-to-end: a real episode on a tiny synthetic dataset, differentiated
// with respect to every parameter of a small model, extractor included.
Instance episode_instance(Rng& rng) {
  SynthConfig sc;
  sc.base_categories = extent(rng, 4, 6);
  sc.val_categories = 1;
  sc.test_categories = 1;
  sc.examples_per_category = 8;
  sc.input_dim = 4;
  sc.seed = rng();
  auto dataset = std::make_shared<Dataset>(generate_dataset(sc));
  Rng holdout = make_rng(sc.seed, streams::kHoldout);
  auto views = std::make_shared<BaseViews>(base_holdout_split(*dataset, 2, holdout));

  ExtractorConfig ec;
  ec.input_dim = 4;
  ec.hidden_dims = {5};
  ec.feature_dim = 3;
  const auto head = std::bernoulli_distribution(0.5)(rng) ? HeadKind::kCosine : HeadKind::kDot;
  ec.use_final_relu = head == HeadKind::kDot;
  auto model = std::make_shared<Model>(
      init_model(ec, sc.base_categories, head, GeneratorMode::kAvgPlusAttention, rng()));
  std::vector<double> all;
  for (std::size_t c = 0; c < dataset->category_count(); ++c) {
    const auto v = dataset->category_values(c);
    all.insert(all.end(), v.begin(), v.end());
  }
  const std::size_t rows = all.size() / ec.input_dim;
  const Tensor inputs({rows, ec.input_dim}, std::move(all));
  model->extractor = smooth_extractor(ec, inputs, rng);
  model->generator = random_generator(rng, sc.base_categories, ec.feature_dim,
                                      GeneratorMode::kAvgPlusAttention);
  if (head == HeadKind::kCosine) model->classifier.tau = leaf(rng, {1}, 1.0, 5.0, false);

  Stage2Config config;
  config.k_novel = extent(rng, 1, 2);
  config.shots = {1, 2};
  config.queries_per_novel = 2;
  config.base_queries = 3;
  const Episode episode = sample_episode(*views, config, rng);

  std::vector<Tensor> ps = model->extractor.tensors();
  for (const Tensor& t : model->classifier.trainable_tensors()) ps.push_back(t);
  for (const Tensor& t : generator_tensors(model->generator)) ps.push_back(t);
  const std::uint64_t mask_seed = rng();
  return {ps, [=](Tape& t) {
            Rng mask(mask_seed);
            EpisodeLossOptions opts;
            opts.train = true;
            opts.dropout_p = 0.2;
            opts.dropout_rng = &mask;
            return episode_loss(t, episode, extractor_features(*dataset, *model), *model, opts);
          }};
}

}  // namespace

std::vector<GradCheckEntry> run_gradient_suite(const GradSuiteOptions& options) {
  auto builders = op_builders();
  for (auto& b : model_builders()) builders.push_back(std::move(b));
  builders.emplace_back("episode_loss", episode_instance);

  std::function<void(Tape&)> configure;
  if (!options.fault_op.empty()) {
    configure = [op = options.fault_op](Tape& t) { t.inject_adjoint_fault(op); };
  }

  std::vector<GradCheckEntry> entries;
  for (std::size_t b = 0; b < builders.size(); ++b) {
    GradCheckEntry entry;
    entry.name = builders[b].first;
    for (std::size_t i = 0; i < options.instances; ++i) {
      Rng rng = make_rng(options.seed, streams::kGradCheck, b * 100000 + i);
      Instance inst = builders[b].second(rng);
      const double err = check_gradients(inst.loss, inst.params, options.step, configure);
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.instances;
    }
    entry.passed = entry.instances > 0 && entry.max_rel_error <= options.tolerance;
    entries.push_back(std::move(entry));
  }
  return entries;
}

}  // namespace fewshot
