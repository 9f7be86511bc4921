#pragma once

#include <cstddef>

namespace spikeformer::blas {

// Row-major C = alpha * op(A) * op(B) + beta * C with op(X) = X or X^T.
// op(A) is m x k, op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc);

void set_threads(std::size_t n);

}  // namespace spikeformer::blas
