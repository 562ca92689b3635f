#include "fewshot/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "fewshot/kernels.hpp"

namespace fewshot {
namespace {

using detail::TensorStorage;
using kernels::Trans;

constexpr std::array<std::string_view, 17> kOpNames = {
    "matmul",       "matmul_nt", "add",         "add_bias",    "hadamard",  "hadamard_rows",
    "scale",        "scale_by",  "relu",        "sum",         "mean_rows", "dropout",
    "l2_normalize", "softmax",   "cross_entropy", "concat_rows", "gather_rows"};

std::vector<double>& grad_of(TensorStorage& s) {
  if (s.grad.empty()) s.grad.assign(s.values.size(), 0.0);
  return s.grad;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + to_string(a.shape()));
  }
}

Shape row_result_shape(const Tensor& a, std::size_t cols) {
  return a.rank() == 1 ? Shape{cols} : Shape{a.rows(), cols};
}

}  // namespace

std::span<const std::string_view> Tape::op_names() { return kOpNames; }

void Tape::note_leaf(const Tensor& t) {
  const auto& s = t.storage_;
  if (s->tape == nullptr && s->trainable &&
      std::find(leaves_.begin(), leaves_.end(), s) == leaves_.end()) {
    leaves_.push_back(s);
  }
}

Tensor Tape::record(std::string_view op, Shape shape, std::vector<double> values,
                    std::vector<const Tensor*> inputs, Backward backward) {
  bool requires_grad = false;
  for (const Tensor* in : inputs) {
    if (in->storage_->tape != nullptr && in->storage_->tape != this) {
      throw std::logic_error(std::string(op) + ": input was produced on a different tape");
    }
    requires_grad = requires_grad || in->requires_grad();
    note_leaf(*in);
  }
  auto storage = std::make_shared<TensorStorage>();
  storage->shape = std::move(shape);
  storage->values = std::move(values);
  storage->requires_grad = requires_grad;
  storage->tape = this;
  storage->node_id = nodes_.size();
  nodes_.push_back(Node{op, storage, requires_grad ? std::move(backward) : Backward{}});
  return Tensor(std::move(storage));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  if (b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n);
  kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, a.values(), b.values(), out, false);
  auto sa = a.storage_, sb = b.storage_;
  return record("matmul", row_result_shape(a, n), std::move(out), {&a, &b},
                [sa, sb, m, n, k](std::span<const double> g) {
                  if (sa->requires_grad) {
                    kernels::gemm(Trans::kNo, Trans::kYes, m, k, n, g, sb->values, grad_of(*sa), true);
                  }
                  if (sb->requires_grad) {
                    kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, sa->values, g, grad_of(*sb), true);
                  }
                });
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  if (b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + to_string(a.shape()) +
                     " and transpose of " + to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(m * n);
  kernels::gemm(Trans::kNo, Trans::kYes, m, n, k, a.values(), b.values(), out, false);
  auto sa = a.storage_, sb = b.storage_;
  return record("matmul_nt", row_result_shape(a, n), std::move(out), {&a, &b},
                [sa, sb, m, n, k](std::span<const double> g) {
                  if (sa->requires_grad) {
                    kernels::gemm(Trans::kNo, Trans::kNo, m, k, n, g, sb->values, grad_of(*sa), true);
                  }
                  if (sb->requires_grad) {
                    kernels::gemm(Trans::kYes, Trans::kNo, n, k, m, g, sa->values, grad_of(*sb), true);
                  }
                });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto sa = a.storage_, sb = b.storage_;
  return record("add", a.shape(), std::move(out), {&a, &b}, [sa, sb](std::span<const double> g) {
    for (auto* s : {sa.get(), sb.get()}) {
      if (!s->requires_grad) continue;
      auto& ga = grad_of(*s);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

Tensor Tape::add_bias(const Tensor& a, const Tensor& bias) {
  require_matrix("add_bias", a);
  if (bias.rank() != 1 || bias.size() != a.cols()) {
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not fit rows of " +
                     to_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a[r * n + j] + bias[j];
  auto sa = a.storage_, sb = bias.storage_;
  return record("add_bias", a.shape(), std::move(out), {&a, &bias},
                [sa, sb, m, n](std::span<const double> g) {
                  if (sa->requires_grad) {
                    auto& ga = grad_of(*sa);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (sb->requires_grad) {
                    auto& gb = grad_of(*sb);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                  }
                });
}

Tensor Tape::hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto sa = a.storage_, sb = b.storage_;
  return record("hadamard", a.shape(), std::move(out), {&a, &b},
                [sa, sb](std::span<const double> g) {
                  if (sa->requires_grad) {
                    auto& ga = grad_of(*sa);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sb->values[i];
                  }
                  if (sb->requires_grad) {
                    auto& gb = grad_of(*sb);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * sa->values[i];
                  }
                });
}

Tensor Tape::hadamard_rows(const Tensor& a, const Tensor& v) {
  require_matrix("hadamard_rows", a);
  if (v.rank() != 1 || v.size() != a.cols()) {
    throw ShapeError("hadamard_rows: vector " + to_string(v.shape()) + " does not fit rows of " +
                     to_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = a[r * n + j] * v[j];
  auto sa = a.storage_, sv = v.storage_;
  return record("hadamard_rows", a.shape(), std::move(out), {&a, &v},
                [sa, sv, m, n](std::span<const double> g) {
                  if (sa->requires_grad) {
                    auto& ga = grad_of(*sa);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[r * n + j] * sv->values[j];
                  }
                  if (sv->requires_grad) {
                    auto& gv = grad_of(*sv);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < n; ++j) gv[j] += g[r * n + j] * sa->values[r * n + j];
                  }
                });
}

Tensor Tape::scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  auto sa = a.storage_;
  return record("scale", a.shape(), std::move(out), {&a}, [sa, c](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Tensor Tape::scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("scale_by: factor must have one element, got " + to_string(s.shape()));
  const double c = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  auto sa = a.storage_, ss = s.storage_;
  return record("scale_by", a.shape(), std::move(out), {&a, &s},
                [sa, ss, c](std::span<const double> g) {
                  if (sa->requires_grad) {
                    auto& ga = grad_of(*sa);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                  }
                  if (ss->requires_grad) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * sa->values[i];
                    grad_of(*ss)[0] += dot;
                  }
                });
}

Tensor Tape::relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  auto sa = a.storage_;
  return record("relu", a.shape(), std::move(out), {&a}, [sa](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (sa->values[i] > 0.0) ga[i] += g[i];
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  auto sa = a.storage_;
  return record("sum", {1}, {total}, {&a}, [sa](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    for (double& v : ga) v += g[0];
  });
}

Tensor Tape::mean_rows(const Tensor& a) {
  require_matrix("mean_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[j] += a[r * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  auto sa = a.storage_;
  return record("mean_rows", {n}, std::move(out), {&a}, [sa, m, n](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[j] * inv;
  });
}

Tensor Tape::dropout(const Tensor& a, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (!train || p == 0.0) return a;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.size());
  for (double& m : mask) m = unit(rng) < p ? 0.0 : keep_scale;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  auto sa = a.storage_;
  return record("dropout", a.shape(), std::move(out), {&a},
                [sa, mask = std::move(mask)](std::span<const double> g) {
                  auto& ga = grad_of(*sa);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                });
}

Tensor Tape::l2_normalize(const Tensor& a, double eps) {
  require_matrix("l2_normalize", a);
  if (eps <= 0.0) throw std::invalid_argument("l2_normalize: eps must be positive");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size()), norms(m);
  kernels::normalize_rows(m, n, eps, a.values(), out, norms);
  auto sa = a.storage_;
  Tensor result = record("l2_normalize", a.shape(), std::move(out), {&a}, {});
  if (!result.requires_grad()) return result;
  // The node owns the output storage, so a raw pointer outlives the closure.
  const TensorStorage* sy = result.storage_.get();
  nodes_.back().backward = [sa, sy, m, n, eps, norms = std::move(norms)](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = sy->values.data() + r * n;
      const double* gr = g.data() + r * n;
      double* gx = ga.data() + r * n;
      if (norms[r] >= eps) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * gr[j];
        for (std::size_t j = 0; j < n; ++j) gx[j] += (gr[j] - y[j] * dot) / norms[r];
      } else {
        for (std::size_t j = 0; j < n; ++j) gx[j] += gr[j] / eps;
      }
    }
  };
  return result;
}

Tensor Tape::softmax(const Tensor& logits) {
  require_matrix("softmax", logits);
  const std::size_t m = logits.rows(), n = logits.cols();
  std::vector<double> out(logits.size());
  kernels::softmax_rows(m, n, logits.values(), out);
  auto sa = logits.storage_;
  Tensor result = record("softmax", logits.shape(), std::move(out), {&logits}, {});
  if (!result.requires_grad()) return result;
  const TensorStorage* sy = result.storage_.get();
  nodes_.back().backward = [sa, sy, m, n](std::span<const double> g) {
    auto& ga = grad_of(*sa);
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = sy->values.data() + r * n;
      const double* gr = g.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gr[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (gr[j] - dot);
    }
  };
  return result;
}

Tensor Tape::cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
  require_matrix("cross_entropy", probs);
  const std::size_t m = probs.rows(), n = probs.cols();
  if (labels.size() != m) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(m) + " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= n) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) +
                              " outside [0, " + std::to_string(n) + ")");
    }
    total -= std::log(probs[r * n + labels[r]] + kLogEps);
  }
  auto sa = probs.storage_;
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  return record("cross_entropy", {1}, {total / static_cast<double>(m)}, {&probs},
                [sa, ys = std::move(ys), m, n](std::span<const double> g) {
                  auto& ga = grad_of(*sa);
                  for (std::size_t r = 0; r < m; ++r) {
                    const std::size_t i = r * n + ys[r];
                    ga[i] -= g[0] / ((sa->values[i] + kLogEps) * static_cast<double>(m));
                  }
                });
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) {
    require_matrix("concat_rows", p);
    if (p.cols() != n) {
      throw ShapeError("concat_rows: row length mismatch " + to_string(parts.front().shape()) +
                       " vs " + to_string(p.shape()));
    }
    m += p.rows();
    inputs.push_back(&p);
  }
  std::vector<double> out;
  out.reserve(m * n);
  std::vector<std::shared_ptr<TensorStorage>> stores;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    stores.push_back(p.storage_);
  }
  return record("concat_rows", {m, n}, std::move(out), std::move(inputs),
                [stores = std::move(stores)](std::span<const double> g) {
                  std::size_t offset = 0;
                  for (const auto& s : stores) {
                    if (s->requires_grad) {
                      auto& gs = grad_of(*s);
                      for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[offset + i];
                    }
                    offset += s->values.size();
                  }
                });
}

Tensor Tape::gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix("gather_rows", a);
  if (rows.empty()) throw ShapeError("gather_rows: no rows selected");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (std::size_t r : rows) {
    if (r >= m) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " of " + to_string(a.shape()));
    }
    out.insert(out.end(), a.values().begin() + static_cast<std::ptrdiff_t>(r * n),
               a.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
  }
  auto sa = a.storage_;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record("gather_rows", {rows.size(), n}, std::move(out), {&a},
                [sa, idx = std::move(idx), n](std::span<const double> g) {
                  auto& ga = grad_of(*sa);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += g[i * n + j];
                });
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  if (nodes_.empty()) throw std::logic_error("backward: tape is empty");
  if (loss.storage_->tape != this) throw std::logic_error("backward: loss was not produced on this tape");

  for (auto& node : nodes_) node.output->grad.clear();
  loss.storage_->grad.assign(1, 1.0);

  std::vector<double> faulty;
  for (std::size_t i = loss.storage_->node_id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.output->grad.empty()) continue;
    std::span<const double> g = node.output->grad;
    if (fault_op_ && *fault_op_ == node.op) {
      faulty.assign(g.begin(), g.end());
      for (double& v : faulty) v *= 1.0 + 1e-2;
      g = faulty;
    }
    node.backward(g);
  }
  for (auto& leaf : leaves_) grad_of(*leaf);
}

}  // namespace fewshot
