#include "spikeformer/binary_matmul.hpp"

#include <bit>
#include <string>

#include "spikeformer/error.hpp"

namespace spikeformer::binary {

BitMatrix::BitMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), words_((cols + 63) / 64),
      bits_(rows * words_, 0) {}

template <typename T>
BitMatrix BitMatrix::pack(std::span<const T> values, std::size_t rows,
                          std::size_t cols, bool transpose) {
  if (values.size() != rows * cols) {
    throw DimensionError("BitMatrix::pack: " + std::to_string(values.size()) +
                         " values for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
  }
  BitMatrix m = transpose ? BitMatrix(cols, rows) : BitMatrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const T v = values[r * cols + c];
      if (v == T(0)) continue;
      if (v != T(1)) {
        throw DataError("BitMatrix::pack: non-binary entry " +
                        std::to_string(static_cast<double>(v)));
      }
      if (transpose) {
        m.set(c, r);
      } else {
        m.set(r, c);
      }
    }
  }
  return m;
}

std::size_t BitMatrix::row_popcount(std::size_t r) const {
  std::size_t n = 0;
  for (auto w : row(r)) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::size_t BitMatrix::popcount() const {
  std::size_t n = 0;
  for (auto w : bits_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

template <typename T>
std::int64_t sparse_dot(std::span<const T> q, std::span<const T> k) {
  if (q.size() != k.size()) {
    throw DimensionError("sparse_dot: lengths " + std::to_string(q.size()) +
                         " and " + std::to_string(k.size()) + " differ");
  }
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] != T(0)) acc += static_cast<std::int64_t>(k[i]);
  }
  return acc;
}

std::int64_t popcount_dot(std::span<const std::uint64_t> q,
                          std::span<const std::uint64_t> k) {
  if (q.size() != k.size()) {
    throw DimensionError("popcount_dot: word counts differ");
  }
  std::int64_t acc = 0;
  for (std::size_t w = 0; w < q.size(); ++w) acc += std::popcount(q[w] & k[w]);
  return acc;
}

std::vector<std::int32_t> and_popcount_nt(const BitMatrix& x,
                                          const BitMatrix& y,
                                          std::uint64_t* accumulates) {
  if (x.cols() != y.cols()) {
    throw DimensionError("and_popcount_nt: inner dimensions " +
                         std::to_string(x.cols()) + " and " +
                         std::to_string(y.cols()) + " differ");
  }
  const std::size_t m = x.rows(), n = y.rows(), words = x.words_per_row();
  std::vector<std::int32_t> out(m * n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto xi = x.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto yj = y.row(j);
      std::int32_t acc = 0;
      for (std::size_t w = 0; w < words; ++w) acc += std::popcount(xi[w] & yj[w]);
      out[i * n + j] = acc;
    }
    if (accumulates) *accumulates += x.row_popcount(i) * n;
  }
  return out;
}

std::vector<std::int32_t> int_times_binary(std::span<const std::int32_t> a,
                                           std::size_t m, const BitMatrix& b,
                                           std::uint64_t* accumulates) {
  const std::size_t k = b.rows(), n = b.cols();
  if (a.size() != m * k) {
    throw DimensionError("int_times_binary: left operand holds " +
                         std::to_string(a.size()) + " values, expected " +
                         std::to_string(m * k));
  }
  std::vector<std::int32_t> out(m * n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::int32_t* oi = out.data() + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const std::int32_t aij = a[i * k + j];
      const auto bj = b.row(j);
      for (std::size_t w = 0; w < bj.size(); ++w) {
        std::uint64_t word = bj[w];
        while (word) {
          const int bit = std::countr_zero(word);
          oi[w * 64 + static_cast<std::size_t>(bit)] += aij;
          word &= word - 1;
        }
      }
    }
  }
  if (accumulates) *accumulates += m * b.popcount();
  return out;
}

std::vector<std::int32_t> binary_times_int(const BitMatrix& a,
                                           std::span<const std::int32_t> b,
                                           std::size_t n,
                                           std::uint64_t* accumulates) {
  const std::size_t m = a.rows(), k = a.cols();
  if (b.size() != k * n) {
    throw DimensionError("binary_times_int: right operand holds " +
                         std::to_string(b.size()) + " values, expected " +
                         std::to_string(k * n));
  }
  std::vector<std::int32_t> out(m * n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::int32_t* oi = out.data() + i * n;
    const auto ai = a.row(i);
    for (std::size_t w = 0; w < ai.size(); ++w) {
      std::uint64_t word = ai[w];
      while (word) {
        const std::size_t j = w * 64 + static_cast<std::size_t>(std::countr_zero(word));
        const std::int32_t* bj = b.data() + j * n;
        for (std::size_t c = 0; c < n; ++c) oi[c] += bj[c];
        word &= word - 1;
      }
    }
  }
  if (accumulates) *accumulates += a.popcount() * n;
  return out;
}

std::vector<std::int32_t> qktv_qk_first(const BitMatrix& q, const BitMatrix& k,
                                        const BitMatrix& v,
                                        ProductCounts* counts) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw DimensionError("qktv: head dimensions disagree");
  }
  std::uint64_t first = 0, second = 0;
  const auto map = and_popcount_nt(q, k, &first);
  auto out = int_times_binary(map, q.rows(), v, &second);
  if (counts) {
    counts->first_stage += first;
    counts->second_stage += second;
  }
  return out;
}

std::vector<std::int32_t> qktv_kv_first(const BitMatrix& q,
                                        const BitMatrix& k_t,
                                        const BitMatrix& v_t,
                                        ProductCounts* counts) {
  if (q.cols() != k_t.rows() || k_t.cols() != v_t.cols()) {
    throw DimensionError("qktv: head dimensions disagree");
  }
  std::uint64_t first = 0, second = 0;
  const auto kv = and_popcount_nt(k_t, v_t, &first);
  auto out = binary_times_int(q, kv, v_t.rows(), &second);
  if (counts) {
    counts->first_stage += first;
    counts->second_stage += second;
  }
  return out;
}

template BitMatrix BitMatrix::pack(std::span<const float>, std::size_t,
                                   std::size_t, bool);
template BitMatrix BitMatrix::pack(std::span<const double>, std::size_t,
                                   std::size_t, bool);
template std::int64_t sparse_dot(std::span<const float>, std::span<const float>);
template std::int64_t sparse_dot(std::span<const double>,
                                 std::span<const double>);
template std::int64_t sparse_dot(std::span<const int>, std::span<const int>);

}  // namespace spikeformer::binary
