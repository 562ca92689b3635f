// Extractor, classifier heads and weight generator.
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fewshot/classifier.hpp"
#include "fewshot/extractor.hpp"
#include "fewshot/generator.hpp"
#include "test_util.hpp"

using namespace fewshot;
using fewshot::testing::random_extent;
using fewshot::testing::random_tensor;
using doctest::Approx;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> unit(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::max(std::sqrt(sq), kNormEps);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t c = t.cols();
  return {t.values().begin() + r * c, t.values().begin() + (r + 1) * c};
}

double dotv(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Term-by-term evaluation of the attention weight, written without the tape:
// for each support i, q_i = phi_q * unit(z_i); a_ib = softmax_b(gamma *
// cos(q_i, k_b)); result = 1/N sum_i sum_b a_ib * unit(w_b).
std::vector<double> attention_oracle(const Tensor& support, const Tensor& w_base, const GeneratorParams& p,
                                     std::vector<std::vector<double>>* coeffs = nullptr) {
  const std::size_t n = support.rows(), k = w_base.rows(), d = w_base.cols();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = unit(row(support, i));
    std::vector<double> q(d, 0.0);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) q[a] += p.phi_q[a * d + b] * z[b];
    }
    const auto qn = unit(q);
    std::vector<double> logits(k);
    for (std::size_t b = 0; b < k; ++b) logits[b] = p.gamma.item() * dotv(qn, unit(row(p.keys, b)));
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double total = 0.0;
    for (double& l : logits) total += (l = std::exp(l - mx));
    for (double& l : logits) l /= total;
    if (coeffs) coeffs->push_back(logits);
    for (std::size_t b = 0; b < k; ++b) {
      const auto wb = unit(row(w_base, b));
      for (std::size_t a = 0; a < d; ++a) out[a] += logits[b] * wb[a] / static_cast<double>(n);
    }
  }
  return out;
}

GeneratorParams random_generator(Rng& rng, std::size_t k, std::size_t d, GeneratorMode mode) {
  GeneratorParams p = init_generator(random_tensor(rng, {k, d}), mode);
  p.phi_avg = random_tensor(rng, {d}, true);
  p.phi_att = random_tensor(rng, {d}, true);
  p.phi_q = random_tensor(rng, {d, d}, true);
  p.keys = random_tensor(rng, {k, d}, true);
  p.gamma = Tensor::scalar(std::uniform_real_distribution<double>(0.5, 5.0)(rng), true);
  return p;
}

std::vector<double> probs(const Tensor& z, const ClassifierState& s) {
  Tape tape;
  const Tensor p = classify(tape, z, s);
  return {p.values().begin(), p.values().end()};
}

}  // namespace

// ---------------------------------------------------------------- extractor

TEST_CASE("extractor init is deterministic and shaped per layer") {
  ExtractorConfig c;
  Rng r1 = make_rng(5, 0), r2 = make_rng(5, 0);
  const ExtractorParams a = init_extractor(c, r1), b = init_extractor(c, r2);
  const auto dims = c.layer_dims();
  REQUIRE(a.weights.size() == dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    CHECK(a.weights[i].shape() == Shape{dims[i + 1], dims[i]});
    CHECK(a.biases[i].shape() == Shape{dims[i + 1]});
    CHECK(max_abs_diff(a.weights[i].values(), b.weights[i].values()) == 0.0);
    for (double v : a.biases[i].values()) CHECK(v == 0.0);
  }
}

TEST_CASE("extractor init scale is 1/sqrt(fan_in)") {
  ExtractorConfig c{100, {100}, 100, false, 0.0};
  Rng rng = make_rng(1, 0);
  const ExtractorParams p = init_extractor(c, rng);
  double sum = 0.0, sq = 0.0, n = 0.0;
  for (const Tensor& w : p.weights) {
    for (double v : w.values()) {
      sum += v;
      sq += v * v;
      n += 1.0;
    }
  }
  REQUIRE(n >= 1e4);
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(std::abs(sd - 0.1) < 0.02);
}

TEST_CASE("extractor config validation") {
  CHECK_THROWS_AS((ExtractorConfig{4, {}, 3, false, 0.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ExtractorConfig{4, {0}, 3, false, 0.0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((ExtractorConfig{4, {2}, 3, false, 1.0}).validate(), std::invalid_argument);
  CHECK_NOTHROW((ExtractorConfig{4, {2}, 3, false, 0.5}).validate());
}

TEST_CASE("extract: zero network gives zero features") {
  ExtractorConfig c{3, {4}, 2, false, 0.0};
  Rng rng = make_rng(0, 0);
  ExtractorParams p = init_extractor(c, rng);
  for (Tensor& w : p.weights) std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
  Tape tape;
  const Tensor z = extract(tape, Tensor({3}, {1, -2, 3}), p, c);
  CHECK(z.shape() == Shape{2});
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("extract: hand-traced one-hidden-layer net") {
  // h = relu(W1 x + b1), z = W2 h + b2
  ExtractorConfig c{2, {2}, 2, false, 0.0};
  ExtractorParams p;
  p.weights = {Tensor({2, 2}, {1, -2, 0.5, 1}), Tensor({2, 2}, {2, 1, -1, 3})};
  p.biases = {Tensor({2}, {0.25, 0}), Tensor({2}, {0, -1})};
  // W1 x + b1 = [-1 + 0.25, 1.5] -> relu -> [0, 1.5]; W2 h + b2 = [1.5, 3.5]
  Tape tape;
  const Tensor z = extract(tape, Tensor({2}, {1, 1}), p, c);
  CHECK(z[0] == Approx(1.5));
  CHECK(z[1] == Approx(3.5));

  c.use_final_relu = true;
  p.biases[1] = Tensor({2}, {-2, -1});
  const Tensor zr = extract(tape, Tensor({2}, {1, 1}), p, c);
  CHECK(zr[0] == 0.0);
  CHECK(zr[1] == Approx(3.5));
}

TEST_CASE("extract rejects a wrong input width") {
  ExtractorConfig c{3, {4}, 2, false, 0.0};
  Rng rng = make_rng(0, 0);
  const ExtractorParams p = init_extractor(c, rng);
  Tape tape;
  CHECK_THROWS_AS(extract(tape, Tensor({4}, {1, 2, 3, 4}), p, c), std::invalid_argument);
}

TEST_CASE("final ReLU controls the sign of features") {
  ExtractorConfig c;
  Rng rng = make_rng(3, 0);
  const ExtractorParams p = init_extractor(c, rng);
  const Tensor x = random_tensor(rng, {128, c.input_dim});
  Tape tape;
  const Tensor with_relu = extract(tape, x, p, ExtractorConfig{c.input_dim, c.hidden_dims, c.feature_dim, true, 0.0});
  for (double v : with_relu.values()) CHECK(v >= 0.0);
  const Tensor without = extract(tape, x, p, c);
  std::size_t negative = 0;
  for (double v : without.values()) negative += v < 0.0;
  CHECK(negative > 0);
}

TEST_CASE("extract is deterministic with training off, dropout only in training") {
  ExtractorConfig c;
  c.dropout_p = 0.5;
  Rng rng = make_rng(4, 0);
  const ExtractorParams p = init_extractor(c, rng);
  const Tensor x = random_tensor(rng, {8, c.input_dim});
  Tape tape;
  const Tensor a = extract(tape, x, p, c), b = extract(tape, x, p, c);
  CHECK(max_abs_diff(a.values(), b.values()) == 0.0);
  Rng drop = make_rng(4, 1);
  const Tensor t = extract(tape, x, p, c, true, &drop);
  std::size_t zeros = 0;
  for (double v : t.values()) zeros += v == 0.0;
  CHECK(zeros > 0);
  CHECK_THROWS_AS(extract(tape, x, p, c, true, nullptr), std::invalid_argument);
}

// ---------------------------------------------------------------- classifier

TEST_CASE("dot_scores examples") {
  Tape tape;
  CHECK(dot_scores(tape, Tensor({2}, {1, 2}), Tensor({1, 2}, {3, 4}))[0] == 11.0);
  Rng rng = make_rng(0, 0);
  const Tensor zero = dot_scores(tape, Tensor::zeros({3}), random_tensor(rng, {4, 3}));
  for (double v : zero.values()) CHECK(v == 0.0);
  const Tensor basis = dot_scores(tape, Tensor({3}, {7, -1, 2}), Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  CHECK(std::vector<double>(basis.values().begin(), basis.values().end()) == std::vector<double>{7, -1, 2});
  CHECK_THROWS_AS(dot_scores(tape, Tensor({2}, {1, 2}), Tensor({1, 3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("cosine_scores examples") {
  Tape tape;
  const Tensor tau10 = Tensor::scalar(10.0);
  CHECK(cosine_scores(tape, Tensor({2}, {2, 4}), Tensor({1, 2}, {1, 2}), tau10)[0] == Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(cosine_scores(tape, Tensor({2}, {1, 1}), Tensor({1, 2}, {1, -1}), tau10)[0]) < 1e-15);
  CHECK(cosine_scores(tape, Tensor({2}, {3, 4}), Tensor({1, 2}, {4, 3}), Tensor::scalar(1.0))[0] ==
        Approx(0.96).epsilon(1e-12));
  CHECK_THROWS_AS(cosine_scores(tape, Tensor({2}, {1, 2}), Tensor({1, 3}, {1, 2, 3}), tau10),
                  std::invalid_argument);
}

TEST_CASE("classify examples") {
  ClassifierState s;
  s.head = HeadKind::kCosine;
  s.tau = Tensor::scalar(10.0);
  s.w_base = Tensor({1, 2}, {0.3, -2});
  CHECK(probs(Tensor({2}, {1, 1}), s)[0] == Approx(1.0));

  // rows symmetric about z = e1
  s.w_base = Tensor({2, 2}, {1, 1, 1, -1});
  const auto p = probs(Tensor({2}, {3, 0}), s);
  CHECK(p[0] == Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == Approx(0.5).epsilon(1e-12));

  // novel rows follow base rows
  s.w_base = Tensor({1, 2}, {1, 0});
  s.w_novel = Tensor({1, 2}, {0, 1});
  const auto pn = probs(Tensor({2}, {0, 1}), s);
  REQUIRE(pn.size() == 2);
  CHECK(pn[1] > pn[0]);

  // an empty W* cannot be built; mismatched rows are the reachable error
  CHECK_THROWS(Tensor::zeros({0, 2}));
  ClassifierState bad = s;
  bad.w_novel = Tensor({1, 3}, {0, 1, 0});
  Tape tape;
  CHECK_THROWS(classify(tape, Tensor({2}, {1, 1}), bad));
}

TEST_CASE("cosine head is scale invariant, dot head is not") {
  Rng rng = make_rng(11, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = random_extent(rng, 2, 6), d = random_extent(rng, 2, 8);
    ClassifierState s = init_classifier(k, d, HeadKind::kCosine, rng);
    s.tau = Tensor::scalar(std::uniform_real_distribution<double>(0.5, 20.0)(rng));
    const Tensor z = random_tensor(rng, {d});
    const auto before = probs(z, s);

    const double c = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    const std::size_t r = random_extent(rng, 0, k - 1);
    ClassifierState scaled = s;
    scaled.w_base = s.w_base.clone();
    for (std::size_t j = 0; j < d; ++j) scaled.w_base.mutable_values()[r * d + j] *= c;
    CHECK(max_abs_diff(before, probs(z, scaled)) < 1e-9);

    Tensor zc = z.clone();
    for (double& v : zc.mutable_values()) v *= c;
    CHECK(max_abs_diff(before, probs(zc, s)) < 1e-9);
  }
  // contrast: the dot head changes when a row is scaled
  ClassifierState dot;
  dot.head = HeadKind::kDot;
  dot.tau = Tensor::scalar(1.0);
  dot.w_base = Tensor({2, 2}, {1, 0, 0, 1});
  ClassifierState dot5 = dot;
  dot5.w_base = Tensor({2, 2}, {5, 0, 0, 1});
  const Tensor z({2}, {1, 1});
  CHECK(max_abs_diff(probs(z, dot), probs(z, dot5)) > 0.1);
}

TEST_CASE("cosine argmax is the nearest normalized weight row") {
  Rng rng = make_rng(12, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = random_extent(rng, 2, 10), d = random_extent(rng, 2, 8);
    const Tensor w = random_tensor(rng, {k, d});
    const Tensor z = random_tensor(rng, {d});
    Tape tape;
    const Tensor s = cosine_scores(tape, z, w, Tensor::scalar(10.0));
    const auto zn = unit(z.values());
    std::size_t best = 0;
    double best_dist = INFINITY;
    for (std::size_t r = 0; r < k; ++r) {
      const auto wr = unit(row(w, r));
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (zn[j] - wr[j]) * (zn[j] - wr[j]);
      if (dist < best_dist) best_dist = dist, best = r;
    }
    CHECK(argmax(s.values()) == best);
  }
}

TEST_CASE("tau sharpens the distribution monotonically; probabilities sum to 1") {
  Rng rng = make_rng(13, 0);
  ClassifierState s = init_classifier(6, 5, HeadKind::kCosine, rng);
  const Tensor z = random_tensor(rng, {5});
  double last = 0.0;
  for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
    s.tau = Tensor::scalar(tau);
    const auto p = probs(z, s);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == Approx(1.0).epsilon(1e-6));
    const double mx = *std::max_element(p.begin(), p.end());
    CHECK(mx > last);
    last = mx;
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  const std::vector<double> v{1, 3, 3, 2};
  CHECK(argmax(v) == 1);
  CHECK(argmax_rows(Tensor({2, 2}, {0, 0, 1, 2})) == std::vector<std::size_t>{0, 1});
}

// ---------------------------------------------------------------- generator

TEST_CASE("avg_weight examples") {
  Tape tape;
  const Tensor one = avg_weight(tape, Tensor({1, 2}, {3, 4}));
  CHECK(one[0] == Approx(0.6));
  CHECK(one[1] == Approx(0.8));
  const Tensor two = avg_weight(tape, Tensor({2, 2}, {2, 0, 0, 5}));
  CHECK(two[0] == Approx(0.5));
  CHECK(two[1] == Approx(0.5));
  const Tensor anti = avg_weight(tape, Tensor({2, 2}, {1, 1, -1, -1}));
  CHECK(std::abs(anti[0]) < 1e-15);
  CHECK(std::abs(anti[1]) < 1e-15);
  CHECK_THROWS(avg_weight(tape, Tensor::zeros({0, 2})));
}

TEST_CASE("attention_weight examples") {
  Rng rng = make_rng(20, 0);
  Tape tape;
  // single base category: w_att = unit(w_1) for any query
  const Tensor w1({1, 3}, {0, 3, 4});
  GeneratorParams p = random_generator(rng, 1, 3, GeneratorMode::kAvgPlusAttention);
  const Tensor a = attention_weight(tape, random_tensor(rng, {2, 3}), w1, p);
  CHECK(max_abs_diff(a.values(), std::vector<double>{0, 0.6, 0.8}) < 1e-15);

  // gamma = 0: uniform attention
  const Tensor w = random_tensor(rng, {4, 3});
  p = random_generator(rng, 4, 3, GeneratorMode::kAvgPlusAttention);
  p.gamma = Tensor::scalar(0.0, true);
  const Tensor u = attention_weight(tape, random_tensor(rng, {1, 3}), w, p);
  std::vector<double> mean(3, 0.0);
  for (std::size_t b = 0; b < 4; ++b) {
    const auto wb = unit(row(w, b));
    for (std::size_t j = 0; j < 3; ++j) mean[j] += wb[j] / 4.0;
  }
  CHECK(max_abs_diff(u.values(), mean) < 1e-12);

  // everything excluded
  CHECK_THROWS(attention_weight(tape, random_tensor(rng, {1, 3}), w, p, std::vector<bool>(4, true)));
}

TEST_CASE("attention matches a term-by-term oracle (K_base <= 3, N' <= 3)") {
  Rng rng = make_rng(21, 0);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = random_extent(rng, 1, 3), n = random_extent(rng, 1, 3), d = random_extent(rng, 1, 5);
    const GeneratorParams p = random_generator(rng, k, d, GeneratorMode::kAvgPlusAttention);
    const Tensor w = random_tensor(rng, {k, d});
    const Tensor support = random_tensor(rng, {n, d});
    Tape tape;
    AttentionTrace trace;
    const Tensor got = attention_weight(tape, support, w, p, {}, &trace);
    std::vector<std::vector<double>> coeffs;
    const auto want = attention_oracle(support, w, p, &coeffs);
    CHECK(max_abs_diff(got.values(), want) < 1e-10);
    REQUIRE(trace.coefficients.size() == n * k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t b = 0; b < k; ++b) CHECK(std::abs(trace.coefficients[i * k + b] - coeffs[i][b]) < 1e-10);
    }
  }
}

TEST_CASE("generate matches the oracle for avg + attention, and reduces exactly with phi_att = 0") {
  Rng rng = make_rng(22, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = random_extent(rng, 1, 6), n = random_extent(rng, 1, 5), d = random_extent(rng, 1, 6);
    GeneratorParams p = random_generator(rng, k, d, GeneratorMode::kAvgPlusAttention);
    const Tensor w = random_tensor(rng, {k, d});
    const Tensor support = random_tensor(rng, {n, d});
    Tape tape;
    const Tensor got = generate(tape, support, w, p);
    const auto att = attention_oracle(support, w, p);
    const Tensor avg = avg_weight(tape, support);
    std::vector<double> want(d);
    for (std::size_t j = 0; j < d; ++j) want[j] = p.phi_avg[j] * avg[j] + p.phi_att[j] * att[j];
    CHECK(max_abs_diff(got.values(), want) < 1e-10);

    std::fill(p.phi_att.mutable_values().begin(), p.phi_att.mutable_values().end(), 0.0);
    const Tensor reduced = generate(tape, support, w, p);
    std::vector<double> only_avg(d);
    for (std::size_t j = 0; j < d; ++j) only_avg[j] = p.phi_avg[j] * avg[j];
    CHECK(max_abs_diff(reduced.values(), only_avg) == 0.0);

    GeneratorParams avg_mode = p;
    avg_mode.mode = GeneratorMode::kAvgOnly;
    CHECK(max_abs_diff(generate(tape, support, w, avg_mode).values(), only_avg) == 0.0);
  }
}

TEST_CASE("fresh generator is the averaging generator") {
  Rng rng = make_rng(23, 0);
  const Tensor w = random_tensor(rng, {5, 4});
  const GeneratorParams p = init_generator(w, GeneratorMode::kAvgPlusAttention);
  CHECK(p.gamma.item() == kInitialAttentionScale);
  for (std::size_t b = 0; b < 5; ++b) CHECK(max_abs_diff(row(p.keys, b), unit(row(w, b))) < 1e-15);
  const Tensor z = random_tensor(rng, {1, 4});
  Tape tape;
  CHECK(max_abs_diff(generate(tape, z, w, p).values(), unit(z.values())) == 0.0);
}

TEST_CASE("generator invariances") {
  Rng rng = make_rng(24, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = random_extent(rng, 2, 6), n = random_extent(rng, 2, 5), d = random_extent(rng, 2, 6);
    const GeneratorParams p = random_generator(rng, k, d, GeneratorMode::kAvgPlusAttention);
    const Tensor w = random_tensor(rng, {k, d});
    const Tensor support = random_tensor(rng, {n, d});
    Tape tape;
    const Tensor base = generate(tape, support, w, p);

    // support order
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor permuted = tape.gather_rows(support, perm);
    CHECK(max_abs_diff(base.values(), generate(tape, permuted, w, p).values()) < 1e-12);

    // one support feature scaled
    const double c = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    const std::size_t r = random_extent(rng, 0, n - 1);
    Tensor scaled = support.clone();
    for (std::size_t j = 0; j < d; ++j) scaled.mutable_values()[r * d + j] *= c;
    CHECK(max_abs_diff(base.values(), generate(tape, scaled, w, p).values()) < 1e-9);

    // one memory value scaled
    const std::size_t b = random_extent(rng, 0, k - 1);
    Tensor ws = w.clone();
    for (std::size_t j = 0; j < d; ++j) ws.mutable_values()[b * d + j] *= c;
    CHECK(max_abs_diff(attention_weight(tape, support, w, p).values(),
                       attention_weight(tape, support, ws, p).values()) < 1e-9);

    // coefficients are a distribution per query
    AttentionTrace trace;
    attention_weight(tape, support, w, p, {}, &trace);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t m = 0; m < k; ++m) {
        CHECK(trace.coefficients[i * k + m] >= 0.0);
        total += trace.coefficients[i * k + m];
      }
      CHECK(total == Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("keys are independent of the memory values") {
  Rng rng = make_rng(25, 0);
  const GeneratorParams p = random_generator(rng, 3, 4, GeneratorMode::kAvgPlusAttention);
  const Tensor w = random_tensor(rng, {3, 4});
  const Tensor support = random_tensor(rng, {2, 4});
  GeneratorParams q = p;
  q.keys = p.keys.clone();
  // cos(q, k) ignores key length; a flipped key is the contrast
  for (std::size_t j = 0; j < 4; ++j) q.keys.mutable_values()[j] *= -1.0;
  Tape tape;
  const Tensor before = attention_weight(tape, support, w, p);
  CHECK(max_abs_diff(before.values(), attention_weight(tape, support, w, q).values()) > 1e-6);
  for (std::size_t j = 0; j < 4; ++j) q.keys.mutable_values()[j] *= -3.0;
  CHECK(max_abs_diff(before.values(), attention_weight(tape, support, w, q).values()) < 1e-12);
}

TEST_CASE("exclusion removes rows from values and keys") {
  Rng rng = make_rng(26, 0);
  const GeneratorParams p = random_generator(rng, 5, 3, GeneratorMode::kAvgPlusAttention);
  const Tensor w = random_tensor(rng, {5, 3});
  const Tensor support = random_tensor(rng, {2, 3});
  const std::vector<bool> excluded{false, true, false, true, false};
  const std::vector<std::size_t> kept{0, 2, 4};
  Tape tape;
  AttentionTrace trace;
  const Tensor masked = attention_weight(tape, support, w, p, excluded, &trace);
  CHECK(trace.memory_rows == kept);

  GeneratorParams sub = p;
  sub.keys = tape.gather_rows(p.keys, kept);
  const Tensor reduced = attention_weight(tape, support, tape.gather_rows(w, kept), sub);
  CHECK(max_abs_diff(masked.values(), reduced.values()) == 0.0);
  CHECK_THROWS(attention_weight(tape, support, w, p, std::vector<bool>(4, false)));
}
