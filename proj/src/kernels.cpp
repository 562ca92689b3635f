#include "fewshot/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace fewshot::kernels {
namespace {

// Element (i, p) of op(x); ld is the row length of the stored matrix.
inline double at(std::span<const double> x, Trans t, std::size_t i, std::size_t p,
                 std::size_t ld) {
  return t == Trans::kNo ? x[i * ld + p] : x[p * ld + i];
}

// One output row of the product; shared by the serial and parallel paths so
// that both sum over the inner index in ascending order.
inline void gemm_row(Trans trans_a, Trans trans_b, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, std::span<const double> a, std::span<const double> b,
                     double* c_row, bool accumulate) {
  const std::size_t lda = trans_a == Trans::kNo ? k : m;
  const std::size_t ldb = trans_b == Trans::kNo ? n : k;
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  if (trans_b == Trans::kNo) {
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = at(a, trans_a, i, p, lda);
      const double* b_row = b.data() + p * ldb;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_row = b.data() + j * ldb;
      double s = c_row[j];
      for (std::size_t p = 0; p < k; ++p) s += at(a, trans_a, i, p, lda) * b_row[p];
      c_row[j] = s;
    }
  }
}

inline void normalize_row(std::size_t cols, double eps, const double* in, double* out,
                          double* norm) {
  double ss = 0.0;
  for (std::size_t j = 0; j < cols; ++j) ss += in[j] * in[j];
  const double nrm = std::sqrt(ss);
  const double denom = std::max(nrm, eps);
  for (std::size_t j = 0; j < cols; ++j) out[j] = in[j] / denom;
  *norm = nrm;
}

inline void softmax_row(std::size_t cols, const double* in, double* out) {
  const double mx = *std::max_element(in, in + cols);
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < cols; ++j) out[j] /= total;
}

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelThreshold && m > 1)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_row(trans_a, trans_b, r, m, n, k, a, b, c.data() + r * n, accumulate);
  }
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> norms) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto r = static_cast<std::size_t>(i);
    normalize_row(cols, eps, in.data() + r * cols, out.data() + r * cols, norms.data() + r);
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto r = static_cast<std::size_t>(i);
    softmax_row(cols, in.data() + r * cols, out.data() + r * cols);
  }
}

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  const std::size_t lda = trans_a == Trans::kNo ? k : m;
  const std::size_t ldb = trans_b == Trans::kNo ? n : k;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a == Trans::kNo ? a[i * lda + p] : a[p * lda + i];
        const double bv = trans_b == Trans::kNo ? b[p * ldb + j] : b[j * ldb + p];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> norms) {
  for (std::size_t r = 0; r < rows; ++r) {
    normalize_row(cols, eps, in.data() + r * cols, out.data() + r * cols, norms.data() + r);
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, in.data() + r * cols, out.data() + r * cols);
}

}  // namespace reference
}  // namespace fewshot::kernels
