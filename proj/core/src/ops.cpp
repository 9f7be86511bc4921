#include "spikeformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blas.hpp"
#include "spikeformer/error.hpp"

namespace spikeformer::ops {
namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) +
                         " and " + to_string(b.shape()) + " differ");
  }
}

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary(const Tensor<T>& x, const char* name, Forward f,
                Derivative df) {
  const auto xs = x.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return Tensor<T>::record(
      x.shape(), std::move(out), {x}, name, [x, df](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        if (gx.empty()) return;
        const auto xs = x.values();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xs[i]);
      });
}

// Splits a shape into (batch, rows, cols) over its two trailing axes.
struct MatrixView {
  std::size_t batch;
  std::size_t rows;
  std::size_t cols;
};

MatrixView matrix_view(const Shape& s, const char* op) {
  if (s.size() < 2) {
    throw DimensionError(std::string(op) + ": needs rank >= 2, got " +
                         to_string(s));
  }
  const std::size_t rows = s[s.size() - 2];
  const std::size_t cols = s[s.size() - 1];
  return {numel(s) / std::max<std::size_t>(rows * cols, 1), rows, cols};
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Transpose trans_a,
                 Transpose trans_b) {
  const bool ta = trans_a == Transpose::Yes;
  const bool tb = trans_b == Transpose::Yes;
  const auto va = matrix_view(a.shape(), "matmul");
  const auto vb = matrix_view(b.shape(), "matmul");
  const std::size_t m = ta ? va.cols : va.rows;
  const std::size_t k = ta ? va.rows : va.cols;
  const std::size_t kb = tb ? vb.cols : vb.rows;
  const std::size_t n = tb ? vb.rows : vb.cols;
  const bool shared_b = b.rank() == 2 && a.rank() > 2;
  const bool batch_ok =
      shared_b ||
      (a.rank() == b.rank() &&
       std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()));
  if (k != kb || !batch_ok) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) +
                         (ta ? "^T" : "") + " and " + to_string(b.shape()) +
                         (tb ? "^T" : ""));
  }
  const std::size_t batch = va.batch;
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);

  const std::size_t lda = ta ? m : k;
  const std::size_t ldb = tb ? k : n;
  const std::size_t a_stride = m * k;
  const std::size_t b_stride = shared_b ? 0 : k * n;
  const std::size_t c_stride = m * n;

  std::vector<T> out(batch * c_stride, T(0));
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  if (shared_b && !ta) {
    blas::gemm<T>(false, tb, batch * m, n, k, T(1), pa, lda, pb, ldb, T(0),
                  out.data(), n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      blas::gemm<T>(ta, tb, m, n, k, T(1), pa + i * a_stride, lda,
                    pb + i * b_stride, ldb, T(0), out.data() + i * c_stride, n);
    }
  }

  return Tensor<T>::record(
      std::move(out_shape), std::move(out), {a, b}, "matmul",
      [=](std::span<const T> g) {
        auto ga = a.grad_accumulator();
        auto gb = b.grad_accumulator();
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        if (!ga.empty()) {
          if (shared_b && !ta) {
            blas::gemm<T>(false, !tb, batch * m, k, n, T(1), g.data(), n, pb,
                          ldb, T(1), ga.data(), k);
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              const T* gi = g.data() + i * c_stride;
              if (!ta) {
                blas::gemm<T>(false, !tb, m, k, n, T(1), gi, n,
                              pb + i * b_stride, ldb, T(1),
                              ga.data() + i * a_stride, k);
              } else {
                blas::gemm<T>(tb, true, k, m, n, T(1), pb + i * b_stride, ldb,
                              gi, n, T(1), ga.data() + i * a_stride, m);
              }
            }
          }
        }
        if (!gb.empty()) {
          if (shared_b && !ta) {
            if (!tb) {
              blas::gemm<T>(true, false, k, n, batch * m, T(1), pa, lda,
                            g.data(), n, T(1), gb.data(), n);
            } else {
              blas::gemm<T>(true, false, n, k, batch * m, T(1), g.data(), n,
                            pa, lda, T(1), gb.data(), k);
            }
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              const T* gi = g.data() + i * c_stride;
              T* gbi = gb.data() + i * b_stride;
              if (!tb) {
                blas::gemm<T>(!ta, false, k, n, m, T(1), pa + i * a_stride,
                              lda, gi, n, T(1), gbi, n);
              } else {
                blas::gemm<T>(true, ta, n, k, m, T(1), gi, n,
                              pa + i * a_stride, lda, T(1), gbi, k);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 ||
      x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) +
                         " incompatible with weight " +
                         to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(0);
  const std::size_t out_dim = weight.dim(1);
  if (bias.defined() && (bias.size() != out_dim)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) +
                         " does not match output width " +
                         std::to_string(out_dim));
  }
  const std::size_t rows = x.size() / std::max<std::size_t>(in, 1);
  std::vector<T> out(rows * out_dim, T(0));
  if (bias.defined()) {
    const auto b = bias.values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(b.begin(), b.end(), out.begin() + r * out_dim);
  }
  blas::gemm<T>(false, false, rows, out_dim, in, T(1), x.values().data(), in,
                weight.values().data(), out_dim, bias.defined() ? T(1) : T(0),
                out.data(), out_dim);
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::record(
      std::move(shape), std::move(out), inputs, "linear",
      [=](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        auto gw = weight.grad_accumulator();
        if (!gx.empty()) {
          blas::gemm<T>(false, true, rows, in, out_dim, T(1), g.data(),
                        out_dim, weight.values().data(), out_dim, T(1),
                        gx.data(), in);
        }
        if (!gw.empty()) {
          blas::gemm<T>(true, false, in, out_dim, rows, T(1),
                        x.values().data(), in, g.data(), out_dim, T(1),
                        gw.data(), out_dim);
        }
        if (bias.defined()) {
          auto gb = bias.grad_accumulator();
          if (!gb.empty()) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < out_dim; ++j)
                gb[j] += g[r * out_dim + j];
          }
        }
      });
}

namespace {

// cols[(c*9 + ky*3 + kx), b*HW + y*W + x] = x[b, c, y+ky-1, x+kx-1]
template <typename T>
std::vector<T> im2col3x3(std::span<const T> x, std::size_t batch,
                         std::size_t channels, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  const std::size_t ncols = batch * hw;
  std::vector<T> cols(channels * 9 * ncols, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = cols.data() + (c * 9 + ky * 3 + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = x.data() + (b * channels + c) * hw;
          T* dst = row + b * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              dst[y * w + xx] = src[sy * w + sx];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im3x3_add(std::span<const T> cols, std::span<T> dx, std::size_t batch,
                   std::size_t channels, std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  const std::size_t ncols = batch * hw;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = cols.data() + (c * 9 + ky * 3 + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          T* dst = dx.data() + (b * channels + c) * hw;
          const T* src = row + b * hw;
          for (std::size_t y = 0; y < h; ++y) {
            const long sy = static_cast<long>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t xx = 0; xx < w; ++xx) {
              const long sx = static_cast<long>(xx + kx) - 1;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              dst[sy * w + sx] += src[y * w + xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d: expects rank-4 input and weight, got " +
                         to_string(x.shape()) + " and " +
                         to_string(weight.shape()));
  }
  if (weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw DimensionError("conv2d: kernel must be 3x3, got " +
                         to_string(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input channels of " + to_string(x.shape()) +
                         " do not match weight " + to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2),
                    w = x.dim(3), out_ch = weight.dim(0);
  const std::size_t hw = h * w;
  const std::size_t ncols = batch * hw;
  const std::size_t kdim = channels * 9;

  const auto cols = im2col3x3<T>(x.values(), batch, channels, h, w);
  std::vector<T> y(out_ch * ncols);
  blas::gemm<T>(false, false, out_ch, ncols, kdim, T(1),
                weight.values().data(), kdim, cols.data(), ncols, T(0),
                y.data(), ncols);
  // [O, B, HW] -> [B, O, HW]
  std::vector<T> out(batch * out_ch * hw);
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(y.data() + o * ncols + b * hw, hw,
                  out.data() + (b * out_ch + o) * hw);

  return Tensor<T>::record(
      Shape{batch, out_ch, h, w}, std::move(out), {x, weight}, "conv2d",
      [=](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        auto gw = weight.grad_accumulator();
        std::vector<T> gy(out_ch * ncols);
        for (std::size_t o = 0; o < out_ch; ++o)
          for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(g.data() + (b * out_ch + o) * hw, hw,
                        gy.data() + o * ncols + b * hw);
        if (!gw.empty()) {
          const auto cols = im2col3x3<T>(x.values(), batch, channels, h, w);
          blas::gemm<T>(false, true, out_ch, kdim, ncols, T(1), gy.data(),
                        ncols, cols.data(), ncols, T(1), gw.data(), kdim);
        }
        if (!gx.empty()) {
          std::vector<T> gcols(kdim * ncols);
          blas::gemm<T>(true, false, kdim, ncols, out_ch, T(1),
                        weight.values().data(), kdim, gy.data(), ncols, T(0),
                        gcols.data(), ncols);
          col2im3x3_add<T>(gcols, gx, batch, channels, h, w);
        }
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  if (x.rank() != 4) {
    throw DimensionError("maxpool2d: expects rank 4, got " +
                         to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2d: spatial size of " + to_string(x.shape()) +
                         " is not even");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  const auto xs = x.values();
  std::vector<T> out(planes * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xs.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * w + 2 * xx;
        const std::size_t candidates[3] = {(2 * y) * w + 2 * xx + 1,
                                           (2 * y + 1) * w + 2 * xx,
                                           (2 * y + 1) * w + 2 * xx + 1};
        for (auto c : candidates)
          if (src[c] > src[best]) best = c;
        const std::size_t o = (p * oh + y) * ow + xx;
        out[o] = src[best];
        argmax[o] = p * h * w + best;
      }
    }
  }
  return Tensor<T>::record(
      Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, "maxpool2d",
      [x, argmax = std::move(argmax)](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        if (gx.empty()) return;
        for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
      });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma,
                    const Tensor<T>& beta, BatchNormState<T>& state,
                    std::size_t channel_axis, bool training) {
  if (channel_axis >= x.rank()) {
    throw DimensionError("batchnorm: channel axis out of range for " +
                         to_string(x.shape()));
  }
  const std::size_t channels = x.dim(channel_axis);
  if (gamma.size() != channels || beta.size() != channels ||
      state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw DimensionError("batchnorm: parameters do not match " +
                         std::to_string(channels) + " channels of " +
                         to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < channel_axis; ++i) outer *= x.dim(i);
  for (std::size_t i = channel_axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t count = outer * inner;
  const auto xs = x.values();
  const auto gs = gamma.values();
  const auto bs = beta.values();

  std::vector<T> mean(channels), inv_std(channels);
  if (training) {
    if (count == 0) throw DimensionError("batchnorm: empty batch");
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = xs.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* p = xs.data() + (o * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
      const double unbiased =
          count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[c] = static_cast<T>(
          (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu);
      state.running_var[c] =
          static_cast<T>((1.0 - state.momentum) * state.running_var[c] +
                         state.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps));
    }
  }

  std::vector<T> xhat(xs.size()), out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T v = (xs[base + i] - mean[c]) * inv_std[c];
        xhat[base + i] = v;
        out[base + i] = gs[c] * v + bs[c];
      }
    }
  }

  return Tensor<T>::record(
      x.shape(), std::move(out), {x, gamma, beta}, "batchnorm",
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const T> g) {
        auto gx = x.grad_accumulator();
        auto gg = gamma.grad_accumulator();
        auto gb = beta.grad_accumulator();
        const auto gs = gamma.values();
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t o = 0; o < outer; ++o) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g += g[base + i];
              sum_gx += static_cast<double>(g[base + i]) * xhat[base + i];
            }
          }
          if (!gg.empty()) gg[c] += static_cast<T>(sum_gx);
          if (!gb.empty()) gb[c] += static_cast<T>(sum_g);
          if (gx.empty()) continue;
          if (training) {
            const double n = static_cast<double>(count);
            const double k = gs[c] * inv_std[c] / n;
            for (std::size_t o = 0; o < outer; ++o) {
              const std::size_t base = (o * channels + c) * inner;
              for (std::size_t i = 0; i < inner; ++i) {
                gx[base + i] += static_cast<T>(
                    k * (n * g[base + i] - sum_g - xhat[base + i] * sum_gx));
              }
            }
          } else {
            const T k = gs[c] * inv_std[c];
            for (std::size_t o = 0; o < outer; ++o) {
              const std::size_t base = (o * channels + c) * inner;
              for (std::size_t i = 0; i < inner; ++i) gx[base + i] += k * g[base + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto as = a.values(), bs = b.values();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor<T>::record(a.shape(), std::move(out), {a, b}, "add",
                           [a, b](std::span<const T> g) {
                             for (const auto* t : {&a, &b}) {
                               auto gt = t->grad_accumulator();
                               for (std::size_t i = 0; i < gt.size(); ++i)
                                 gt[i] += g[i];
                             }
                           });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.values(), bs = b.values();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return Tensor<T>::record(a.shape(), std::move(out), {a, b}, "sub",
                           [a, b](std::span<const T> g) {
                             auto ga = a.grad_accumulator();
                             for (std::size_t i = 0; i < ga.size(); ++i)
                               ga[i] += g[i];
                             auto gb = b.grad_accumulator();
                             for (std::size_t i = 0; i < gb.size(); ++i)
                               gb[i] -= g[i];
                           });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.values(), bs = b.values();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor<T>::record(a.shape(), std::move(out), {a, b}, "mul",
                           [a, b](std::span<const T> g) {
                             auto ga = a.grad_accumulator();
                             auto gb = b.grad_accumulator();
                             const auto as = a.values(), bs = b.values();
                             for (std::size_t i = 0; i < ga.size(); ++i)
                               ga[i] += g[i] * bs[i];
                             for (std::size_t i = 0; i < gb.size(); ++i)
                               gb[i] += g[i] * as[i];
                           });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      x, "scale", [factor](T v) { return v * factor; },
      [factor](T) { return factor; });
}

template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) {
    throw DimensionError("scale_by: factor must hold one element, got " +
                         to_string(s.shape()));
  }
  const T f = s.item();
  const auto xs = x.values();
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * f;
  return Tensor<T>::record(x.shape(), std::move(out), {x, s}, "scale_by",
                           [x, s](std::span<const T> g) {
                             const T f = s.item();
                             auto gx = x.grad_accumulator();
                             for (std::size_t i = 0; i < gx.size(); ++i)
                               gx[i] += g[i] * f;
                             auto gs = s.grad_accumulator();
                             if (!gs.empty()) {
                               const auto xs = x.values();
                               double acc = 0.0;
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 acc += static_cast<double>(g[i]) * xs[i];
                               gs[0] += static_cast<T>(acc);
                             }
                           });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>(
      x, "add_scalar", [value](T v) { return v + value; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T negative_slope) {
  return unary<T>(
      x, "leaky_relu",
      [negative_slope](T v) { return v > T(0) ? v : negative_slope * v; },
      [negative_slope](T v) { return v > T(0) ? T(1) : negative_slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) - s);
      });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0 || x.size() == 0) return x;
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  const auto xs = x.values();
  std::vector<T> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xs.data() + r * width;
    T* o = out.data() + r * width;
    const T mx = *std::max_element(in, in + width);
    T total(0);
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  auto saved = out;
  return Tensor<T>::record(
      x.shape(), std::move(out), {x}, "softmax",
      [x, width, rows, y = std::move(saved)](std::span<const T> g) {
        auto gx = x.grad_accumulator();
        if (gx.empty()) return;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          T dot(0);
          for (std::size_t j = 0; j < width; ++j) dot += g[base + j] * y[base + j];
          for (std::size_t j = 0; j < width; ++j)
            gx[base + j] += y[base + j] * (g[base + j] - dot);
        }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) +
                         " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto xs = logits.values();
  std::vector<T> probs(xs.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw DimensionError("cross_entropy: label " + std::to_string(label) +
                           " outside [0, " + std::to_string(classes) + ")");
    }
    const T* row = xs.data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    double total = 0.0;
    for (std::size_t j = 0; j < classes; ++j) total += std::exp(double(row[j] - mx));
    const double lse = std::log(total) + mx;
    loss += lse - row[label];
    for (std::size_t j = 0; j < classes; ++j)
      probs[b * classes + j] = static_cast<T>(std::exp(double(row[j]) - lse));
  }
  loss /= static_cast<double>(batch);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return Tensor<T>::record(
      Shape{1}, {static_cast<T>(loss)}, {logits}, "cross_entropy",
      [=, probs = std::move(probs),
       saved_labels = std::move(saved_labels)](std::span<const T> g) {
        auto gl = logits.grad_accumulator();
        if (gl.empty()) return;
        const T k = g[0] / static_cast<T>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t j = 0; j < classes; ++j) {
            const T target = static_cast<int>(j) == saved_labels[b] ? T(1) : T(0);
            gl[b * classes + j] += k * (probs[b * classes + j] - target);
          }
        }
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) +
                         " as " + to_string(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return Tensor<T>::record(std::move(shape), std::move(out), {x}, "reshape",
                           [x](std::span<const T> g) {
                             auto gx = x.grad_accumulator();
                             for (std::size_t i = 0; i < gx.size(); ++i)
                               gx[i] += g[i];
                           });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  std::vector<bool> used(r, false);
  if (axes.size() != r) {
    throw DimensionError("permute: axis list length does not match " +
                         to_string(x.shape()));
  }
  for (auto a : axes) {
    if (a >= r || used[a]) {
      throw DimensionError("permute: invalid axis list for " +
                           to_string(x.shape()));
    }
    used[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // Stride in the input for each output axis.
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) src_strides[i] = in_strides[axes[i]];

  const std::size_t n = x.size();
  std::vector<std::size_t> gather(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    gather[o] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      src += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xs = x.values();
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = xs[gather[o]];
  return Tensor<T>::record(std::move(out_shape), std::move(out), {x}, "permute",
                           [x, gather = std::move(gather)](std::span<const T> g) {
                             auto gx = x.grad_accumulator();
                             if (gx.empty()) return;
                             for (std::size_t o = 0; o < g.size(); ++o)
                               gx[gather[o]] += g[o];
                           });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean_axis: axis out of range for " +
                         to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  if (shape.empty()) shape.push_back(1);
  const auto xs = x.values();
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += xs[(o * len + l) * inner + i];
  const T inv = T(1) / static_cast<T>(len);
  for (auto& v : out) v *= inv;
  return Tensor<T>::record(std::move(shape), std::move(out), {x}, "mean_axis",
                           [=](std::span<const T> g) {
                             auto gx = x.grad_accumulator();
                             if (gx.empty()) return;
                             for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t l = 0; l < len; ++l)
                                 for (std::size_t i = 0; i < inner; ++i)
                                   gx[(o * len + l) * inner + i] +=
                                       g[o * inner + i] * inv;
                           });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double total = 0.0;
  for (T v : x.values()) total += v;
  return Tensor<T>::record(Shape{1}, {static_cast<T>(total)}, {x}, "sum",
                           [x](std::span<const T> g) {
                             auto gx = x.grad_accumulator();
                             for (auto& v : gx) v += g[0];
                           });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(std::max<std::size_t>(x.size(), 1)));
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index) {
  if (x.rank() == 0 || index >= x.dim(0)) {
    throw DimensionError("select: index " + std::to_string(index) +
                         " out of range for " + to_string(x.shape()));
  }
  Shape shape(x.shape().begin() + 1, x.shape().end());
  if (shape.empty()) shape.push_back(1);
  const std::size_t stride = x.size() / x.dim(0);
  const auto xs = x.values();
  std::vector<T> out(xs.begin() + static_cast<long>(index * stride),
                     xs.begin() + static_cast<long>((index + 1) * stride));
  return Tensor<T>::record(std::move(shape), std::move(out), {x}, "select",
                           [x, index, stride](std::span<const T> g) {
                             auto gx = x.grad_accumulator();
                             if (gx.empty()) return;
                             for (std::size_t i = 0; i < stride; ++i)
                               gx[index * stride + i] += g[i];
                           });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack: no tensors");
  const Shape& inner = parts.front().shape();
  for (const auto& p : parts) require_same_shape(p, parts.front(), "stack");
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  const std::size_t stride = parts.front().size();
  std::vector<T> out;
  out.reserve(stride * parts.size());
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor<T>::record(std::move(shape), std::move(out), parts, "stack",
                           [parts, stride](std::span<const T> g) {
                             for (std::size_t k = 0; k < parts.size(); ++k) {
                               auto gp = parts[k].grad_accumulator();
                               for (std::size_t i = 0; i < gp.size(); ++i)
                                 gp[i] += g[k * stride + i];
                             }
                           });
}

#define SPIKEFORMER_INSTANTIATE_OPS(T)                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, Transpose,      \
                            Transpose);                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,                 \
                            const Tensor<T>&);                                   \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> maxpool2d(const Tensor<T>&);                               \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&, BatchNormState<T>&,             \
                               std::size_t, bool);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                \
  template Tensor<T> scale_by(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                           \
  template Tensor<T> relu(const Tensor<T>&);                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                 \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                         \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&); \
  template Tensor<T> mean_axis(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> sum(const Tensor<T>&);                                     \
  template Tensor<T> mean(const Tensor<T>&);                                    \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);

SPIKEFORMER_INSTANTIATE_OPS(float)
SPIKEFORMER_INSTANTIATE_OPS(double)

}  // namespace spikeformer::ops
