#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

// Multiplication-free kernels for products involving {0,1} operands. Every
// kernel reports the number of accumulate operations it performs, which is
// the synaptic-operation count used by the profiler.
namespace spikeformer::binary {

// Row-major bit matrix; each row is packed into 64-bit words.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols);

  // Packs a dense row-major {0,1} matrix. With `transpose` the packed matrix
  // is the transpose of `values` (rows x cols describe `values`). Throws
  // DimensionError on a size mismatch and DataError on a non-binary entry.
  template <typename T>
  static BitMatrix pack(std::span<const T> values, std::size_t rows,
                        std::size_t cols, bool transpose = false);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words_per_row() const { return words_; }

  bool get(std::size_t r, std::size_t c) const {
    return (bits_[r * words_ + c / 64] >> (c % 64)) & 1u;
  }
  void set(std::size_t r, std::size_t c) {
    bits_[r * words_ + c / 64] |= std::uint64_t{1} << (c % 64);
  }
  std::span<const std::uint64_t> row(std::size_t r) const {
    return {bits_.data() + r * words_, words_};
  }
  std::size_t row_popcount(std::size_t r) const;
  std::size_t popcount() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

// Dot product of two {0,1} vectors as a masked accumulation: sum of k[i] over
// the positions where q[i] = 1. No multiplications.
template <typename T>
std::int64_t sparse_dot(std::span<const T> q, std::span<const T> k);

// Packed form of the same quantity: popcount(q AND k).
std::int64_t popcount_dot(std::span<const std::uint64_t> q,
                          std::span<const std::uint64_t> k);

// out[m x n] = X Y^T for binary X[m x d], Y[n x d] (both packed by rows),
// via AND + popcount. `accumulates` grows by the masked-accumulation count
// (popcount of each X row times n).
std::vector<std::int32_t> and_popcount_nt(const BitMatrix& x,
                                          const BitMatrix& y,
                                          std::uint64_t* accumulates = nullptr);

// out[m x n] = A B for integer A[m x k] and binary B[k x n]: for every set
// bit B[j, c], A[:, j] is added into out[:, c]. `accumulates` grows by
// m * popcount(B).
std::vector<std::int32_t> int_times_binary(std::span<const std::int32_t> a,
                                           std::size_t m, const BitMatrix& b,
                                           std::uint64_t* accumulates = nullptr);

// out[m x n] = A B for binary A[m x k] and integer B[k x n]: row B[j, :] is
// added into out[i, :] for every set bit A[i, j]. `accumulates` grows by
// popcount(A) * n.
std::vector<std::int32_t> binary_times_int(const BitMatrix& a,
                                           std::span<const std::int32_t> b,
                                           std::size_t n,
                                           std::uint64_t* accumulates = nullptr);

// Per-stage accumulate counts of one Q K^T V product.
struct ProductCounts {
  std::uint64_t first_stage = 0;
  std::uint64_t second_stage = 0;
  std::uint64_t total() const { return first_stage + second_stage; }
};

// Q K^T V for binary Q, K, V [n x d] in either association order, returned
// as an n x d integer matrix.
std::vector<std::int32_t> qktv_qk_first(const BitMatrix& q, const BitMatrix& k,
                                        const BitMatrix& v,
                                        ProductCounts* counts = nullptr);
// Expects the transposes of K and V packed (d x n) and Q by rows.
std::vector<std::int32_t> qktv_kv_first(const BitMatrix& q,
                                        const BitMatrix& k_t,
                                        const BitMatrix& v_t,
                                        ProductCounts* counts = nullptr);

}  // namespace spikeformer::binary
