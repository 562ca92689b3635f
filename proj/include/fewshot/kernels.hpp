#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the autodiff tape.
//
// Every kernel has two implementations: the OpenMP one in `kernels` and a
// plain serial one in `kernels::reference`. Both accumulate each output
// element in the same order, so their results are bit-identical; the tests
// rely on that and the benchmark compares their speed.

namespace fewshot::kernels {

enum class Trans { kNo, kYes };

// C[m x n] (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// A is stored as m x k (kNo) or k x m (kYes); likewise B as k x n or n x k.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);

// out[r] = in[r] / max(||in[r]||, eps) for each row; norms[r] receives the
// unclamped norm.
void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> norms);

// Row-wise softmax with max subtraction.
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out);

namespace reference {

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate);
void normalize_rows(std::size_t rows, std::size_t cols, double eps, std::span<const double> in,
                    std::span<double> out, std::span<double> norms);
void softmax_rows(std::size_t rows, std::size_t cols, std::span<const double> in,
                  std::span<double> out);

}  // namespace reference

// Below this many multiply-adds the parallel kernels run on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace fewshot::kernels
