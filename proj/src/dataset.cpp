#include "fewshot/dataset.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fewshot/binary_io.hpp"

namespace fewshot {
namespace {

constexpr std::string_view kDatasetMagic = "FSLDATA\x1a";
constexpr std::uint32_t kDatasetVersion = 1;

std::vector<double> random_orthogonal(std::size_t dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> q(dim * dim);
  for (std::size_t r = 0; r < dim; ++r) {
    double* row = q.data() + r * dim;
    // Resample on the (measure-zero) chance of a degenerate row.
    for (;;) {
      for (std::size_t j = 0; j < dim; ++j) row[j] = normal(rng);
      for (std::size_t p = 0; p < r; ++p) {
        const double* prev = q.data() + p * dim;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim; ++j) dot += row[j] * prev[j];
        for (std::size_t j = 0; j < dim; ++j) row[j] -= dot * prev[j];
      }
      double ss = 0.0;
      for (std::size_t j = 0; j < dim; ++j) ss += row[j] * row[j];
      if (ss > 1e-10) {
        const double inv = 1.0 / std::sqrt(ss);
        for (std::size_t j = 0; j < dim; ++j) row[j] *= inv;
        break;
      }
    }
  }
  return q;
}

std::vector<double> apply(std::span<const double> m, std::size_t rows, std::size_t cols,
                          std::span<const double> x, bool transpose) {
  std::vector<double> y(transpose ? cols : rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (transpose) {
        y[c] += m[r * cols + c] * x[r];
      } else {
        y[r] += m[r * cols + c] * x[c];
      }
    }
  return y;
}

void write_config(BinaryWriter& w, const SynthConfig& c) {
  w.u64(c.base_categories);
  w.u64(c.val_categories);
  w.u64(c.test_categories);
  w.u64(c.examples_per_category);
  w.u64(c.input_dim);
  w.f64(c.center_scale);
  w.f64(c.noise_scale);
  w.f64(c.nuisance_strength);
  w.u64(c.superclasses);
  w.f64(c.superclass_share);
  w.f64(c.amplitude_jitter);
  w.u64(c.seed);
}

SynthConfig read_config(BinaryReader& r) {
  SynthConfig c;
  c.base_categories = r.u64();
  c.val_categories = r.u64();
  c.test_categories = r.u64();
  c.examples_per_category = r.u64();
  c.input_dim = r.u64();
  c.center_scale = r.f64();
  c.noise_scale = r.f64();
  c.nuisance_strength = r.f64();
  c.superclasses = r.u64();
  c.superclass_share = r.f64();
  c.amplitude_jitter = r.f64();
  c.seed = r.u64();
  return c;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kBase: return "base";
    case Split::kValNovel: return "val_novel";
    case Split::kTestNovel: return "test_novel";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "base") return Split::kBase;
  if (text == "val_novel") return Split::kValNovel;
  if (text == "test_novel") return Split::kTestNovel;
  throw std::invalid_argument("unknown split '" + std::string(text) +
                              "' (expected base, val_novel or test_novel)");
}

void SynthConfig::validate() const {
  if (base_categories == 0 || val_categories == 0 || test_categories == 0 ||
      examples_per_category == 0 || input_dim == 0) {
    throw std::invalid_argument("synthetic dataset: all counts must be positive");
  }
  if (input_dim < 2) throw std::invalid_argument("synthetic dataset: input_dim must be at least 2");
  if (!(center_scale > 0.0) || !(noise_scale >= 0.0) || !(nuisance_strength >= 0.0)) {
    throw std::invalid_argument(
        "synthetic dataset: center_scale must be positive, noise and nuisance nonnegative");
  }
  if (!(amplitude_jitter >= 0.0)) throw std::invalid_argument("synthetic dataset: amplitude_jitter must be nonnegative");
  if (!(superclass_share >= 0.0 && superclass_share < 1.0)) {
    throw std::invalid_argument("synthetic dataset: superclass_share must lie in [0, 1)");
  }
}

Dataset::Dataset(SynthConfig metadata, std::size_t input_dim, std::vector<Split> splits,
                 std::vector<std::vector<double>> examples)
    : metadata_(metadata), input_dim_(input_dim), splits_(std::move(splits)),
      examples_(std::move(examples)) {
  if (splits_.size() != examples_.size()) throw std::invalid_argument("dataset: split/example count mismatch");
  for (const auto& e : examples_) {
    if (input_dim_ == 0 || e.size() % input_dim_ != 0) {
      throw std::invalid_argument("dataset: example array is not a whole number of vectors");
    }
  }
}

std::vector<std::size_t> Dataset::categories(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < splits_.size(); ++c) {
    if (splits_[c] == split) out.push_back(c);
  }
  return out;
}

std::size_t Dataset::example_count(std::size_t category) const {
  return examples_.at(category).size() / input_dim_;
}

std::span<const double> Dataset::example(std::size_t category, std::size_t index) const {
  if (index >= example_count(category)) {
    throw std::out_of_range("dataset: example " + std::to_string(index) + " of category " +
                            std::to_string(category));
  }
  return std::span<const double>(examples_[category]).subspan(index * input_dim_, input_dim_);
}

LatentData generate_latent(const SynthConfig& config) {
  config.validate();
  Rng rng = make_rng(config.seed, streams::kDataset);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t dim = config.input_dim;
  auto unit_direction = [&]() {
    std::vector<double> u(dim);
    double ss = 0.0;
    for (double& v : u) {
      v = normal(rng);
      ss += v * v;
    }
    for (double& v : u) v /= std::sqrt(ss);
    return u;
  };
  std::vector<std::vector<double>> supers;
  for (std::size_t s = 0; s < config.superclasses; ++s) supers.push_back(unit_direction());

  LatentData data;
  for (std::size_t c = 0; c < config.total_categories(); ++c) {
    std::vector<double> center = unit_direction();
    if (!supers.empty()) {
      const auto& shared = supers[c % supers.size()];
      const double a = std::sqrt(config.superclass_share), b = std::sqrt(1.0 - config.superclass_share);
      for (std::size_t j = 0; j < dim; ++j) center[j] = a * shared[j] + b * center[j];
    }
    double ss = 0.0;
    for (double v : center) ss += v * v;
    const double scale = config.center_scale / std::sqrt(ss);
    for (double& v : center) v *= scale;

    std::vector<double> examples(config.examples_per_category * dim);
    for (std::size_t i = 0; i < config.examples_per_category; ++i)
      for (std::size_t j = 0; j < dim; ++j) {
        examples[i * dim + j] = center[j] + config.noise_scale * normal(rng);
      }
    data.centers.push_back(std::move(center));
    data.examples.push_back(std::move(examples));
  }
  return data;
}

NuisanceMap::NuisanceMap(std::size_t dim, double strength, Rng& rng)
    : dim_(dim), half_(dim / 2), strength_(strength) {
  rot_in_ = random_orthogonal(dim, rng);
  rot_out_ = random_orthogonal(dim, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t rest = dim - half_;
  couple_a_.resize(rest * half_);
  couple_b_.resize(half_ * rest);
  for (double& v : couple_a_) v = normal(rng) / std::sqrt(static_cast<double>(half_));
  for (double& v : couple_b_) v = normal(rng) / std::sqrt(static_cast<double>(rest));
}

std::vector<double> NuisanceMap::forward(std::span<const double> x) const {
  std::vector<double> u = apply(rot_in_, dim_, dim_, x, false);
  const std::size_t rest = dim_ - half_;
  const double gain = strength_ * std::sqrt(static_cast<double>(dim_));
  const double amplitude = 2.0 / std::sqrt(static_cast<double>(dim_));
  if (strength_ > 0.0) {
    const auto da = apply(couple_a_, rest, half_, std::span<const double>(u).first(half_), false);
    for (std::size_t j = 0; j < rest; ++j) u[half_ + j] += amplitude * std::tanh(gain * da[j]);
    const auto db = apply(couple_b_, half_, rest, std::span<const double>(u).subspan(half_), false);
    for (std::size_t j = 0; j < half_; ++j) u[j] += amplitude * std::tanh(gain * db[j]);
  }
  return apply(rot_out_, dim_, dim_, u, false);
}

std::vector<double> NuisanceMap::inverse(std::span<const double> y) const {
  std::vector<double> u = apply(rot_out_, dim_, dim_, y, true);
  const std::size_t rest = dim_ - half_;
  const double gain = strength_ * std::sqrt(static_cast<double>(dim_));
  const double amplitude = 2.0 / std::sqrt(static_cast<double>(dim_));
  if (strength_ > 0.0) {
    const auto db = apply(couple_b_, half_, rest, std::span<const double>(u).subspan(half_), false);
    for (std::size_t j = 0; j < half_; ++j) u[j] -= amplitude * std::tanh(gain * db[j]);
    const auto da = apply(couple_a_, rest, half_, std::span<const double>(u).first(half_), false);
    for (std::size_t j = 0; j < rest; ++j) u[half_ + j] -= amplitude * std::tanh(gain * da[j]);
  }
  return apply(rot_in_, dim_, dim_, u, true);
}

Dataset generate_dataset(const SynthConfig& config) {
  LatentData latent = generate_latent(config);
  Rng rng = make_rng(config.seed, streams::kNuisance);
  const NuisanceMap nuisance(config.input_dim, config.nuisance_strength, rng);
  const std::size_t dim = config.input_dim;

  std::vector<Split> splits;
  splits.insert(splits.end(), config.base_categories, Split::kBase);
  splits.insert(splits.end(), config.val_categories, Split::kValNovel);
  splits.insert(splits.end(), config.test_categories, Split::kTestNovel);

  std::vector<std::vector<double>> examples;
  for (std::size_t c = 0; c < latent.examples.size(); ++c) {
    const auto& cat = latent.examples[c];
    Rng gain_rng = make_rng(config.seed, streams::kAmplitude, c);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> mapped(cat.size());
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < config.examples_per_category; ++i) {
      const double gain = config.amplitude_jitter > 0.0 ? std::exp(config.amplitude_jitter * normal(gain_rng)) : 1.0;
      for (std::size_t j = 0; j < dim; ++j) x[j] = gain * cat[i * dim + j];
      const auto y = nuisance.forward(x);
      std::copy(y.begin(), y.end(), mapped.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    examples.push_back(std::move(mapped));
  }
  return Dataset(config, dim, std::move(splits), std::move(examples));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ostringstream buffer;
  BinaryWriter w(buffer);
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  write_config(w, dataset.metadata());
  w.u64(dataset.input_dim());
  w.u64(dataset.category_count());
  for (std::size_t c = 0; c < dataset.category_count(); ++c) {
    w.u8(static_cast<std::uint8_t>(dataset.split_of(c)));
    w.f64_array(dataset.category_values(c));
  }
  write_file(path, buffer.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path, "dataset"));
  BinaryReader r(in, "dataset " + path.string());
  r.header(kDatasetMagic, kDatasetVersion);
  const SynthConfig metadata = read_config(r);
  const std::uint64_t input_dim = r.u64();
  const std::uint64_t count = r.u64();
  if (input_dim == 0 || count > (1u << 24)) throw FormatError("dataset " + path.string() + ": bad header");
  std::vector<Split> splits;
  std::vector<std::vector<double>> examples;
  for (std::uint64_t c = 0; c < count; ++c) {
    const std::uint8_t s = r.u8();
    if (s > 2) throw FormatError("dataset " + path.string() + ": bad split tag " + std::to_string(s));
    splits.push_back(static_cast<Split>(s));
    examples.push_back(r.f64_array());
    if (examples.back().size() % input_dim != 0) {
      throw FormatError("dataset " + path.string() + ": category " + std::to_string(c) +
                        " is not a whole number of vectors");
    }
  }
  r.expect_end();
  return Dataset(metadata, input_dim, std::move(splits), std::move(examples));
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
  if (count > n) {
    throw std::invalid_argument("cannot draw " + std::to_string(count) + " distinct items from " +
                                std::to_string(n));
  }
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

BaseViews base_holdout_split(const Dataset& dataset, std::size_t per_category_holdout, Rng& rng) {
  BaseViews views;
  views.base_categories = dataset.categories(Split::kBase);
  for (std::size_t c : views.base_categories) {
    const std::size_t n = dataset.example_count(c);
    if (per_category_holdout >= n) {
      throw std::invalid_argument("base category " + std::to_string(c) + " has " + std::to_string(n) +
                                  " examples, too few to hold out " +
                                  std::to_string(per_category_holdout));
    }
    auto order = sample_without_replacement(n, n, rng);
    views.test.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_category_holdout));
    views.train.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(per_category_holdout), order.end());
  }
  return views;
}

}  // namespace fewshot
