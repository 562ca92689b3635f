#include "fewshot/checkpoint.hpp"

#include <sstream>

#include "fewshot/binary_io.hpp"

namespace fewshot {
namespace {

constexpr std::string_view kCheckpointMagic = "FSLCKPT\x1a";
constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensor(BinaryWriter& w, std::string_view name, const Tensor& t) {
  w.str(name);
  w.u64(t.rank());
  for (std::size_t e : t.shape()) w.u64(e);
  w.f64_array(t.values());
}

Tensor read_tensor(BinaryReader& r, std::string_view expected_name) {
  const std::string name = r.str();
  if (name != expected_name) {
    throw FormatError("checkpoint: expected array '" + std::string(expected_name) + "', found '" + name + "'");
  }
  const std::uint64_t rank = r.u64();
  if (rank == 0 || rank > 2) throw FormatError("checkpoint: array '" + name + "' has rank " + std::to_string(rank));
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.u64());
  std::vector<double> values = r.f64_array();
  try {
    return Tensor(std::move(shape), std::move(values), true);
  } catch (const ShapeError& e) {
    throw FormatError("checkpoint: array '" + name + "': " + e.what());
  }
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw FormatError("checkpoint: array '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                      to_string(shape));
  }
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ostringstream buffer;
  BinaryWriter w(buffer);
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const ExtractorConfig& ec = model.extractor_config;
  w.u64(ec.input_dim);
  w.u64(ec.hidden_dims.size());
  for (std::size_t h : ec.hidden_dims) w.u64(h);
  w.u64(ec.feature_dim);
  w.u8(ec.use_final_relu ? 1 : 0);
  w.f64(ec.dropout_p);
  w.str(to_string(model.classifier.head));
  w.str(to_string(model.generator.mode));
  w.u32(static_cast<std::uint32_t>(model.stage));
  w.u64(model.classifier.base_count());

  for (std::size_t i = 0; i < model.extractor.weights.size(); ++i) {
    write_tensor(w, "extractor.w" + std::to_string(i), model.extractor.weights[i]);
    write_tensor(w, "extractor.b" + std::to_string(i), model.extractor.biases[i]);
  }
  write_tensor(w, "classifier.w_base", model.classifier.w_base);
  write_tensor(w, "classifier.tau", model.classifier.tau);
  write_tensor(w, "generator.phi_avg", model.generator.phi_avg);
  write_tensor(w, "generator.phi_att", model.generator.phi_att);
  write_tensor(w, "generator.phi_q", model.generator.phi_q);
  write_tensor(w, "generator.keys", model.generator.keys);
  write_tensor(w, "generator.gamma", model.generator.gamma);

  write_file(path, buffer.str());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(read_file(path, "checkpoint"));
  BinaryReader r(in, "checkpoint " + path.string());
  r.header(kCheckpointMagic, kCheckpointVersion);

  Model model;
  ExtractorConfig& ec = model.extractor_config;
  ec.input_dim = r.u64();
  const std::uint64_t hidden = r.u64();
  if (hidden == 0 || hidden > 64) throw FormatError("checkpoint: implausible hidden layer count");
  ec.hidden_dims.clear();
  for (std::uint64_t i = 0; i < hidden; ++i) ec.hidden_dims.push_back(r.u64());
  ec.feature_dim = r.u64();
  ec.use_final_relu = r.u8() != 0;
  ec.dropout_p = r.f64();
  try {
    ec.validate();
    model.classifier.head = parse_head_kind(r.str());
    model.generator.mode = parse_generator_mode(r.str());
  } catch (const std::invalid_argument& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  model.stage = static_cast<int>(r.u32());
  const std::uint64_t base_count = r.u64();

  const auto dims = ec.layer_dims();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string wn = "extractor.w" + std::to_string(i), bn = "extractor.b" + std::to_string(i);
    model.extractor.weights.push_back(read_tensor(r, wn));
    expect_shape(model.extractor.weights.back(), {dims[i + 1], dims[i]}, wn);
    model.extractor.biases.push_back(read_tensor(r, bn));
    expect_shape(model.extractor.biases.back(), {dims[i + 1]}, bn);
  }
  const std::size_t d = ec.feature_dim;
  model.classifier.w_base = read_tensor(r, "classifier.w_base");
  expect_shape(model.classifier.w_base, {base_count, d}, "classifier.w_base");
  model.classifier.tau = read_tensor(r, "classifier.tau");
  expect_shape(model.classifier.tau, {1}, "classifier.tau");
  model.generator.phi_avg = read_tensor(r, "generator.phi_avg");
  expect_shape(model.generator.phi_avg, {d}, "generator.phi_avg");
  model.generator.phi_att = read_tensor(r, "generator.phi_att");
  expect_shape(model.generator.phi_att, {d}, "generator.phi_att");
  model.generator.phi_q = read_tensor(r, "generator.phi_q");
  expect_shape(model.generator.phi_q, {d, d}, "generator.phi_q");
  model.generator.keys = read_tensor(r, "generator.keys");
  expect_shape(model.generator.keys, {base_count, d}, "generator.keys");
  model.generator.gamma = read_tensor(r, "generator.gamma");
  expect_shape(model.generator.gamma, {1}, "generator.gamma");
  r.expect_end();
  return model;
}

}  // namespace fewshot
