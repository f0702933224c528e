#pragma once

#include <Eigen/Core>

#include "purify/tensor.hpp"

namespace purify::detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Column budget keeps the im2col scratch bounded regardless of resolution.
constexpr std::int64_t kColBudget = 8u << 20;  // elements

template <typename T>
void check_conv_shapes(const Shape& x, const Shape& k, int stride, int pad) {
  if (k.c != x.c) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(k.c) +
                                " input channels, input has shape " + x.str() +
                                " vs kernel " + k.str());
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (pad < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  if (conv_out_dim(x.h, k.h, stride, pad) < 1 || conv_out_dim(x.w, k.w, stride, pad) < 1) {
    throw std::invalid_argument("conv2d: output spatial dims not positive for input " +
                                x.str() + " kernel " + k.str());
  }
}

/// Fill `col` (rows = Ci*kh*kw, cols = count) from output positions
/// [start, start+count) of one batch item.
template <typename T>
void im2col_tile(const TensorT<T>& x, int batch, int kh, int kw, int stride, int pad,
                 int wo, std::int64_t start, std::int64_t count, MatRM<T>& col) {
  const Shape& s = x.shape();
  const int rows = s.c * kh * kw;
  col.resize(rows, count);
  for (int ci = 0; ci < s.c; ++ci) {
    const T* plane = x.data() + (static_cast<size_t>(batch) * s.c + ci) * s.h * s.w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ci * kh + ky) * kw + kx;
        T* dst = col.data() + static_cast<std::int64_t>(row) * count;
        for (std::int64_t p = 0; p < count; ++p) {
          const std::int64_t op = start + p;
          const int oy = static_cast<int>(op / wo);
          const int ox = static_cast<int>(op % wo);
          const int iy = oy * stride - pad + ky;
          const int ix = ox * stride - pad + kx;
          dst[p] = (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w)
                       ? plane[static_cast<size_t>(iy) * s.w + ix]
                       : T(0);
        }
      }
    }
  }
}

/// Scatter-add transpose of im2col_tile.
template <typename T>
void col2im_tile(const MatRM<T>& col, int batch, int kh, int kw, int stride, int pad,
                 int wo, std::int64_t start, std::int64_t count, TensorT<T>& x) {
  const Shape& s = x.shape();
  for (int ci = 0; ci < s.c; ++ci) {
    T* plane = x.data() + (static_cast<size_t>(batch) * s.c + ci) * s.h * s.w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (ci * kh + ky) * kw + kx;
        const T* src = col.data() + static_cast<std::int64_t>(row) * count;
        for (std::int64_t p = 0; p < count; ++p) {
          const std::int64_t op = start + p;
          const int oy = static_cast<int>(op / wo);
          const int ox = static_cast<int>(op % wo);
          const int iy = oy * stride - pad + ky;
          const int ix = ox * stride - pad + kx;
          if (iy >= 0 && iy < s.h && ix >= 0 && ix < s.w) {
            plane[static_cast<size_t>(iy) * s.w + ix] += src[p];
          }
        }
      }
    }
  }
}

template <typename T>
TensorT<T> conv_fwd(const TensorT<T>& x, const TensorT<T>& k, int stride, int pad) {
  check_conv_shapes<T>(x.shape(), k.shape(), stride, pad);
  const Shape xs = x.shape(), ks = k.shape();
  const int ho = conv_out_dim(xs.h, ks.h, stride, pad);
  const int wo = conv_out_dim(xs.w, ks.w, stride, pad);
  TensorT<T> y(xs.n, ks.n, ho, wo);

  const int kdim = ks.c * ks.h * ks.w;
  Eigen::Map<const MatRM<T>> kmat(k.data(), ks.n, kdim);
  const std::int64_t total = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t tile = std::max<std::int64_t>(1, kColBudget / std::max(1, kdim));
  MatRM<T> col;
  for (int b = 0; b < xs.n; ++b) {
    for (std::int64_t start = 0; start < total; start += tile) {
      const std::int64_t count = std::min(tile, total - start);
      im2col_tile(x, b, ks.h, ks.w, stride, pad, wo, start, count, col);
      Eigen::Map<MatRM<T>> ymat(y.data() + (static_cast<size_t>(b) * ks.n) * total, ks.n, total);
      ymat.middleCols(start, count).noalias() = kmat * col;
    }
  }
  return y;
}

template <typename T>
TensorT<T> conv_bwd_input(const TensorT<T>& dy, const TensorT<T>& k, int stride, int pad,
                          Shape in_shape) {
  const Shape ys = dy.shape(), ks = k.shape();
  if (ys.c != ks.n) {
    throw std::invalid_argument("conv backward-input: channel mismatch " + ys.str() +
                                " vs kernel " + ks.str());
  }
  TensorT<T> dx(in_shape);
  const int kdim = ks.c * ks.h * ks.w;
  Eigen::Map<const MatRM<T>> kmat(k.data(), ks.n, kdim);
  const std::int64_t total = static_cast<std::int64_t>(ys.h) * ys.w;
  const std::int64_t tile = std::max<std::int64_t>(1, kColBudget / std::max(1, kdim));
  MatRM<T> col;
  for (int b = 0; b < ys.n; ++b) {
    Eigen::Map<const MatRM<T>> dymat(dy.data() + (static_cast<size_t>(b) * ys.c) * total,
                                     ys.c, total);
    for (std::int64_t start = 0; start < total; start += tile) {
      const std::int64_t count = std::min(tile, total - start);
      col.resize(kdim, count);
      col.noalias() = kmat.transpose() * dymat.middleCols(start, count);
      col2im_tile(col, b, ks.h, ks.w, stride, pad, ys.w, start, count, dx);
    }
  }
  return dx;
}

template <typename T>
TensorT<T> conv_bwd_kernel(const TensorT<T>& x, const TensorT<T>& dy, int stride, int pad,
                           Shape kernel_shape) {
  const Shape xs = x.shape(), ys = dy.shape(), ks = kernel_shape;
  TensorT<T> dk(ks);
  const int kdim = ks.c * ks.h * ks.w;
  Eigen::Map<MatRM<T>> dkmat(dk.data(), ks.n, kdim);
  const std::int64_t total = static_cast<std::int64_t>(ys.h) * ys.w;
  const std::int64_t tile = std::max<std::int64_t>(1, kColBudget / std::max(1, kdim));
  MatRM<T> col;
  for (int b = 0; b < xs.n; ++b) {
    Eigen::Map<const MatRM<T>> dymat(dy.data() + (static_cast<size_t>(b) * ys.c) * total,
                                     ys.c, total);
    for (std::int64_t start = 0; start < total; start += tile) {
      const std::int64_t count = std::min(tile, total - start);
      im2col_tile(x, b, ks.h, ks.w, stride, pad, ys.w, start, count, col);
      dkmat.noalias() += dymat.middleCols(start, count) * col.transpose();
    }
  }
  return dk;
}

}  // namespace purify::detail
