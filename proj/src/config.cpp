#include "fewshot/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "fewshot/binary_io.hpp"

namespace fewshot {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config key '" + std::string(key) + "': bad value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::string_view expected) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) bad_value(key, value, expected);
  return out;
}

std::size_t parse_count(std::string_view key, std::string_view value) {
  return parse_number<std::size_t>(key, value, "a nonnegative integer");
}

double parse_real(std::string_view key, std::string_view value) {
  return parse_number<double>(key, value, "a number");
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto item = trim(value.substr(start, comma == std::string_view::npos ? value.npos : comma - start));
    if (item.empty()) bad_value(key, value, "a comma-separated list of integers");
    out.push_back(parse_number<std::size_t>(key, item, "a comma-separated list of integers"));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Entry {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FS_COUNT(name, field)                                                                         \
  Entry {                                                                                             \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_count(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                                    \
  }
#define FS_REAL(name, field)                                                                         \
  Entry {                                                                                            \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.field = parse_real(k, v); }, \
        [](const RunConfig& c) { return format_real(c.field); }                                      \
  }

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = {
      {"seed",
       [](RunConfig& c, std::string_view k, std::string_view v) {
         c.seed = parse_number<std::uint64_t>(k, v, "a nonnegative integer");
         c.data.seed = c.seed;
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},

      FS_COUNT("data.base_categories", data.base_categories),
      FS_COUNT("data.val_categories", data.val_categories),
      FS_COUNT("data.test_categories", data.test_categories),
      FS_COUNT("data.examples_per_category", data.examples_per_category),
      FS_COUNT("data.input_dim", data.input_dim),
      FS_REAL("data.center_scale", data.center_scale),
      FS_REAL("data.noise_scale", data.noise_scale),
      FS_REAL("data.nuisance_strength", data.nuisance_strength),
      FS_COUNT("data.superclasses", data.superclasses),
      FS_REAL("data.superclass_share", data.superclass_share),
      FS_REAL("data.amplitude_jitter", data.amplitude_jitter),
      FS_COUNT("data.base_holdout", base_holdout),

      {"model.hidden_dims",
       [](RunConfig& c, std::string_view k, std::string_view v) { c.hidden_dims = parse_list(k, v); },
       [](const RunConfig& c) { return format_list(c.hidden_dims); }},
      FS_COUNT("model.feature_dim", feature_dim),
      {"model.head",
       [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v != "dot" && v != "cosine") bad_value(k, v, "dot or cosine");
         c.head = parse_head_kind(v);
       },
       [](const RunConfig& c) { return std::string(to_string(c.head)); }},
      {"model.final_relu",
       [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v == "auto") {
           c.final_relu.reset();
         } else {
           c.final_relu = parse_bool(k, v);
         }
       },
       [](const RunConfig& c) {
         return c.final_relu ? std::string(*c.final_relu ? "true" : "false") : std::string("auto");
       }},
      FS_REAL("model.dropout", dropout),
      {"model.generator",
       [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v != "avg_only" && v != "avg_plus_attention") bad_value(k, v, "avg_only or avg_plus_attention");
         c.generator = parse_generator_mode(v);
       },
       [](const RunConfig& c) { return std::string(to_string(c.generator)); }},

      FS_COUNT("stage1.epochs", stage1.epochs),
      FS_COUNT("stage1.batch_size", stage1.batch_size),
      FS_REAL("stage1.lr", stage1.sgd.lr),
      FS_REAL("stage1.momentum", stage1.sgd.momentum),
      FS_REAL("stage1.weight_decay", stage1.sgd.weight_decay),
      FS_REAL("stage1.decay_at", stage1.decay_at),
      FS_REAL("stage1.lr_decay", stage1.lr_decay),

      FS_COUNT("stage2.epochs", stage2.epochs),
      FS_COUNT("stage2.episodes_per_epoch", stage2.episodes_per_epoch),
      FS_COUNT("stage2.episodes_per_batch", stage2.episodes_per_batch),
      FS_REAL("stage2.lr", stage2.sgd.lr),
      FS_REAL("stage2.momentum", stage2.sgd.momentum),
      FS_REAL("stage2.weight_decay", stage2.sgd.weight_decay),
      FS_REAL("stage2.base_lr_scale", stage2.base_lr_scale),
      FS_REAL("stage2.feature_dropout", stage2.feature_dropout),
      FS_COUNT("stage2.k_novel", stage2.k_novel),
      {"stage2.shots",
       [](RunConfig& c, std::string_view k, std::string_view v) { c.stage2.shots = parse_list(k, v); },
       [](const RunConfig& c) { return format_list(c.stage2.shots); }},
      FS_COUNT("stage2.queries_per_novel", stage2.queries_per_novel),
      FS_COUNT("stage2.base_queries", stage2.base_queries),

      FS_COUNT("eval.tasks", eval_tasks),
      {"eval.split",
       [](RunConfig& c, std::string_view k, std::string_view v) {
         if (v != "val_novel" && v != "test_novel") bad_value(k, v, "val_novel or test_novel");
         c.task.split = parse_split(v);
       },
       [](const RunConfig& c) { return std::string(to_string(c.task.split)); }},
      FS_COUNT("eval.k_novel", task.k_novel),
      FS_COUNT("eval.shots", task.shots),
      FS_COUNT("eval.test_per_novel", task.test_per_novel),
      FS_COUNT("eval.base_test_total", task.base_test_total),

      FS_COUNT("grad.instances", grad.instances),
      FS_REAL("grad.tolerance", grad.tolerance),
      FS_REAL("grad.step", grad.step),
  };
  return entries;
}

#undef FS_COUNT
#undef FS_REAL

const Entry& find(std::string_view key) {
  for (const Entry& e : table()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

ExtractorConfig RunConfig::extractor_config(std::size_t input_dim) const {
  ExtractorConfig ec;
  ec.input_dim = input_dim;
  ec.hidden_dims = hidden_dims;
  ec.feature_dim = feature_dim;
  ec.use_final_relu = final_relu.value_or(head == HeadKind::kDot);
  ec.dropout_p = dropout;
  return ec;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find(key).set(*this, key, trim(value));
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("invalid config: " + msg);
  };
  try {
    data.validate();
    extractor_config(data.input_dim).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  require(data.seed == seed, "data seed differs from seed");
  require(base_holdout < data.examples_per_category, "data.base_holdout must be below data.examples_per_category");
  for (const SgdConfig* s : {&stage1.sgd, &stage2.sgd}) {
    require(s->lr >= 0.0, "learning rates must be nonnegative");
    require(s->momentum >= 0.0 && s->momentum < 1.0, "momentum must lie in [0, 1)");
    require(s->weight_decay >= 0.0, "weight decay must be nonnegative");
  }
  require(stage1.batch_size > 0, "stage1.batch_size must be positive");
  require(stage1.decay_at >= 0.0 && stage1.decay_at <= 1.0, "stage1.decay_at must lie in [0, 1]");
  require(stage2.episodes_per_batch > 0, "stage2.episodes_per_batch must be positive");
  require(stage2.base_lr_scale >= 0.0, "stage2.base_lr_scale must be nonnegative");
  require(stage2.feature_dropout >= 0.0 && stage2.feature_dropout < 1.0, "stage2.feature_dropout must lie in [0, 1)");
  require(stage2.k_novel > 0 && stage2.k_novel < data.base_categories,
          "stage2.k_novel must be positive and below data.base_categories");
  require(!stage2.shots.empty(), "stage2.shots must not be empty");
  for (std::size_t s : stage2.shots) require(s > 0, "stage2.shots entries must be positive");
  require(stage2.queries_per_novel > 0, "stage2.queries_per_novel must be positive");
  require(eval_tasks >= 2, "eval.tasks must be at least 2");
  require(task.k_novel > 0 && task.shots > 0, "eval.k_novel and eval.shots must be positive");
  require(grad.instances > 0 && grad.tolerance > 0.0 && grad.step > 0.0, "grad settings must be positive");
}

std::string RunConfig::get(std::string_view key) const { return find(key).get(*this); }

std::vector<std::string_view> RunConfig::keys() {
  std::vector<std::string_view> out;
  for (const Entry& e : table()) out.push_back(e.key);
  return out;
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  const std::string text = read_file(path, "config");
  apply_config_text(config, text, path.string());
}

std::string to_text(const RunConfig& config) {
  std::ostringstream out;
  for (const Entry& e : table()) out << e.key << " = " << e.get(config) << "\n";
  return out.str();
}

}  // namespace fewshot
