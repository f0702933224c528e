#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "purify/conv_kernels.hpp"
#include "purify/tensor.hpp"

namespace purify::ad {

/// One record on the tape: the computed value, references to the inputs and
/// the rule that routes an upstream gradient to them. The tape is a DAG held
/// together by shared_ptr edges; backward() visits each node exactly once.
template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;
  bool requires_grad = false;
  bool is_leaf = false;
  std::string op;
  std::vector<std::shared_ptr<NodeT>> inputs;
  std::function<void(NodeT&)> backward_fn;
};

template <typename T>
using VarT = std::shared_ptr<NodeT<T>>;

using Var = VarT<float>;

template <typename T>
VarT<T> leaf(TensorT<T> value, std::string name = "leaf") {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_leaf = true;
  n->op = std::move(name);
  return n;
}

template <typename T>
VarT<T> constant(TensorT<T> value, std::string name = "const") {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  n->op = std::move(name);
  return n;
}

namespace detail_ad {

template <typename T>
NodeT<T>& ensure_grad(NodeT<T>& n) {
  if (n.grad.empty()) n.grad = TensorT<T>(n.value.shape());
  return n;
}

template <typename T>
VarT<T> make_node(TensorT<T> value, std::string op, std::vector<VarT<T>> inputs,
                  std::function<void(NodeT<T>&)> backward_fn) {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  n->op = std::move(op);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs) {
    if (in->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

}  // namespace detail_ad

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> kernel, VarT<T> bias, int stride, int pad,
               bool fuse_relu = false) {
  TensorT<T> y = purify::detail::conv_fwd(x->value, kernel->value, stride, pad);
  const Shape ks = kernel->value.shape();
  if (bias) {
    if (bias->value.numel() != ks.n) {
      throw std::invalid_argument("conv2d: bias length " + std::to_string(bias->value.numel()) +
                                  " does not match kernel output channels " + ks.str());
    }
    const Shape ys = y.shape();
    for (int b = 0; b < ys.n; ++b)
      for (int c = 0; c < ys.c; ++c) {
        const T bv = bias->value[c];
        T* p = y.data() + (static_cast<size_t>(b) * ys.c + c) * ys.h * ys.w;
        for (int i = 0; i < ys.h * ys.w; ++i) p[i] += bv;
      }
  }
  if (fuse_relu) {
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  }
  std::vector<VarT<T>> ins = bias ? std::vector<VarT<T>>{x, kernel, bias}
                                  : std::vector<VarT<T>>{x, kernel};
  const Shape in_shape = x->value.shape();
  return detail_ad::make_node<T>(
      std::move(y), fuse_relu ? "conv2d+relu" : "conv2d", std::move(ins),
      [stride, pad, in_shape, ks, fuse_relu](NodeT<T>& n) {
        TensorT<T> dy = n.grad;
        if (fuse_relu) {
          for (std::int64_t i = 0; i < dy.numel(); ++i)
            if (n.value[i] <= T(0)) dy[i] = T(0);
        }
        auto& x_in = *n.inputs[0];
        auto& k_in = *n.inputs[1];
        if (x_in.requires_grad) {
          detail_ad::ensure_grad(x_in).grad.axpy(
              T(1), purify::detail::conv_bwd_input(dy, k_in.value, stride, pad, in_shape));
        }
        if (k_in.requires_grad) {
          detail_ad::ensure_grad(k_in).grad.axpy(
              T(1), purify::detail::conv_bwd_kernel(x_in.value, dy, stride, pad, ks));
        }
        if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
          auto& b_in = detail_ad::ensure_grad(*n.inputs[2]);
          const Shape ys = dy.shape();
          for (int b = 0; b < ys.n; ++b)
            for (int c = 0; c < ys.c; ++c) {
              const T* p = dy.data() + (static_cast<size_t>(b) * ys.c + c) * ys.h * ys.w;
              double acc = 0.0;
              for (int i = 0; i < ys.h * ys.w; ++i) acc += static_cast<double>(p[i]);
              b_in.grad[c] += static_cast<T>(acc);
            }
        }
      });
}

/// Transposed convolution (stride-s upsampling); kernel layout is
/// (in_channels, out_channels, kh, kw).
template <typename T>
VarT<T> conv_transpose2d(VarT<T> x, VarT<T> kernel, VarT<T> bias, int stride, int pad) {
  const Shape xs = x->value.shape(), ks = kernel->value.shape();
  if (ks.n != xs.c) {
    throw std::invalid_argument("conv_transpose2d: kernel expects " + std::to_string(ks.n) +
                                " input channels, input " + xs.str() + " vs kernel " + ks.str());
  }
  const int ho = (xs.h - 1) * stride - 2 * pad + ks.h;
  const int wo = (xs.w - 1) * stride - 2 * pad + ks.w;
  if (ho < 1 || wo < 1) {
    throw std::invalid_argument("conv_transpose2d: output dims not positive for " + xs.str());
  }
  Shape out_shape{xs.n, ks.c, ho, wo};
  TensorT<T> y = purify::detail::conv_bwd_input(x->value, kernel->value, stride, pad, out_shape);
  if (bias) {
    if (bias->value.numel() != ks.c) {
      throw std::invalid_argument("conv_transpose2d: bias length mismatch for kernel " + ks.str());
    }
    for (int b = 0; b < out_shape.n; ++b)
      for (int c = 0; c < out_shape.c; ++c) {
        const T bv = bias->value[c];
        T* p = y.data() + (static_cast<size_t>(b) * out_shape.c + c) * ho * wo;
        for (int i = 0; i < ho * wo; ++i) p[i] += bv;
      }
  }
  std::vector<VarT<T>> ins = bias ? std::vector<VarT<T>>{x, kernel, bias}
                                  : std::vector<VarT<T>>{x, kernel};
  return detail_ad::make_node<T>(
      std::move(y), "conv_transpose2d", std::move(ins), [stride, pad, ks](NodeT<T>& n) {
        auto& x_in = *n.inputs[0];
        auto& k_in = *n.inputs[1];
        if (x_in.requires_grad) {
          detail_ad::ensure_grad(x_in).grad.axpy(
              T(1), purify::detail::conv_fwd(n.grad, k_in.value, stride, pad));
        }
        if (k_in.requires_grad) {
          detail_ad::ensure_grad(k_in).grad.axpy(
              T(1), purify::detail::conv_bwd_kernel(n.grad, x_in.value, stride, pad, ks));
        }
        if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
          auto& b_in = detail_ad::ensure_grad(*n.inputs[2]);
          const Shape ys = n.grad.shape();
          for (int b = 0; b < ys.n; ++b)
            for (int c = 0; c < ys.c; ++c) {
              const T* p = n.grad.data() + (static_cast<size_t>(b) * ys.c + c) * ys.h * ys.w;
              double acc = 0.0;
              for (int i = 0; i < ys.h * ys.w; ++i) acc += static_cast<double>(p[i]);
              b_in.grad[c] += static_cast<T>(acc);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
VarT<T> relu(VarT<T> x) {
  TensorT<T> y = x->value;
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  return detail_ad::make_node<T>(std::move(y), "relu", {x}, [](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      if (n.inputs[0]->value[i] > T(0)) in.grad[i] += n.grad[i];
    }
  });
}

template <typename T>
VarT<T> sigmoid(VarT<T> x) {
  TensorT<T> y = x->value;
  for (std::int64_t i = 0; i < y.numel(); ++i)
    y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(y[i]))));
  return detail_ad::make_node<T>(std::move(y), "sigmoid", {x}, [](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      const T s = n.value[i];
      in.grad[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

/// 127.5 * (tanh(x) + 1): maps the reals onto the pixel range [0, 255].
template <typename T>
VarT<T> scaled_tanh(VarT<T> x) {
  TensorT<T> y = x->value;
  for (std::int64_t i = 0; i < y.numel(); ++i)
    y[i] = static_cast<T>(127.5 * (std::tanh(static_cast<double>(y[i])) + 1.0));
  return detail_ad::make_node<T>(std::move(y), "scaled_tanh", {x}, [](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      const double th = static_cast<double>(n.value[i]) / 127.5 - 1.0;
      in.grad[i] += n.grad[i] * static_cast<T>(127.5 * (1.0 - th * th));
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling

/// Max pooling; gradient is routed to the argmax with ties broken at the
/// lowest flat index (backward routing depends on this).
template <typename T>
VarT<T> max_pool2d(VarT<T> x, int window, int stride) {
  const Shape s = x->value.shape();
  if (window > s.h || window > s.w) {
    throw std::invalid_argument("max_pool2d: window " + std::to_string(window) +
                                " exceeds input " + s.str());
  }
  if (stride < 1 || window < 1) throw std::invalid_argument("max_pool2d: bad window/stride");
  const int ho = (s.h - window) / stride + 1;
  const int wo = (s.w - window) / stride + 1;
  TensorT<T> y(s.n, s.c, ho, wo);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.numel());
  std::int64_t o = 0;
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox, ++o) {
          T best{};
          std::int64_t best_idx = -1;
          for (int ky = 0; ky < window; ++ky)
            for (int kx = 0; kx < window; ++kx) {
              const std::int64_t idx =
                  static_cast<std::int64_t>(x->value.idx(b, c, oy * stride + ky, ox * stride + kx));
              const T v = x->value[idx];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = idx;
              }
            }
          y[o] = best;
          (*argmax)[o] = best_idx;
        }
  return detail_ad::make_node<T>(std::move(y), "max_pool2d", {x}, [argmax](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) in.grad[(*argmax)[i]] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail_ad {

template <typename T>
void check_broadcast(const Shape& a, const Shape& b, const char* what) {
  const bool same = a == b;
  const bool chan = b.n == a.n && b.c == 1 && b.h == a.h && b.w == a.w;
  if (!same && !chan) {
    throw std::invalid_argument(std::string(what) + ": incompatible shapes " + a.str() +
                                " vs " + b.str());
  }
}

}  // namespace detail_ad

/// Pointwise sum; b may be single-channel and is then broadcast over channels.
template <typename T>
VarT<T> add(VarT<T> a, VarT<T> b) {
  detail_ad::check_broadcast<T>(a->value.shape(), b->value.shape(), "add");
  const Shape as = a->value.shape(), bs = b->value.shape();
  TensorT<T> y = a->value;
  const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
  if (as == bs) {
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += b->value[i];
  } else {
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c) {
        T* dst = y.data() + (static_cast<size_t>(n) * as.c + c) * plane;
        const T* src = b->value.data() + static_cast<size_t>(n) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
      }
  }
  return detail_ad::make_node<T>(std::move(y), "add", {a, b}, [](NodeT<T>& n) {
    const Shape as = n.inputs[0]->value.shape(), bs = n.inputs[1]->value.shape();
    if (n.inputs[0]->requires_grad) {
      detail_ad::ensure_grad(*n.inputs[0]).grad.axpy(T(1), n.grad);
    }
    if (n.inputs[1]->requires_grad) {
      auto& bg = detail_ad::ensure_grad(*n.inputs[1]).grad;
      if (as == bs) {
        bg.axpy(T(1), n.grad);
      } else {
        const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
        for (int b = 0; b < as.n; ++b)
          for (int c = 0; c < as.c; ++c) {
            const T* src = n.grad.data() + (static_cast<size_t>(b) * as.c + c) * plane;
            T* dst = bg.data() + static_cast<size_t>(b) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
          }
      }
    }
  });
}

template <typename T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
  if (a->value.shape() != b->value.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + a->value.shape().str() + " vs " +
                                b->value.shape().str());
  }
  TensorT<T> y = a->value;
  for (std::int64_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
  return detail_ad::make_node<T>(std::move(y), "sub", {a, b}, [](NodeT<T>& n) {
    if (n.inputs[0]->requires_grad) detail_ad::ensure_grad(*n.inputs[0]).grad.axpy(T(1), n.grad);
    if (n.inputs[1]->requires_grad) detail_ad::ensure_grad(*n.inputs[1]).grad.axpy(T(-1), n.grad);
  });
}

/// Pointwise product; b may be single-channel (the attention-map weighting)
/// and is broadcast over channels.
template <typename T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
  detail_ad::check_broadcast<T>(a->value.shape(), b->value.shape(), "mul");
  const Shape as = a->value.shape(), bs = b->value.shape();
  TensorT<T> y = a->value;
  const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
  if (as == bs) {
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] *= b->value[i];
  } else {
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c) {
        T* dst = y.data() + (static_cast<size_t>(n) * as.c + c) * plane;
        const T* src = b->value.data() + static_cast<size_t>(n) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] *= src[i];
      }
  }
  return detail_ad::make_node<T>(std::move(y), "mul", {a, b}, [](NodeT<T>& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    const Shape as = av.shape(), bs = bv.shape();
    const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
    if (n.inputs[0]->requires_grad) {
      auto& ag = detail_ad::ensure_grad(*n.inputs[0]).grad;
      if (as == bs) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) ag[i] += n.grad[i] * bv[i];
      } else {
        for (int b = 0; b < as.n; ++b)
          for (int c = 0; c < as.c; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * as.c + c) * plane;
            const T* m = bv.data() + static_cast<std::int64_t>(b) * plane;
            for (std::int64_t i = 0; i < plane; ++i) ag[off + i] += n.grad[off + i] * m[i];
          }
      }
    }
    if (n.inputs[1]->requires_grad) {
      auto& bg = detail_ad::ensure_grad(*n.inputs[1]).grad;
      if (as == bs) {
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) bg[i] += n.grad[i] * av[i];
      } else {
        for (int b = 0; b < as.n; ++b)
          for (int c = 0; c < as.c; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * as.c + c) * plane;
            T* dst = bg.data() + static_cast<std::int64_t>(b) * plane;
            for (std::int64_t i = 0; i < plane; ++i) dst[i] += n.grad[off + i] * av[off + i];
          }
      }
    }
  });
}

template <typename T>
VarT<T> scale(VarT<T> x, double s) {
  TensorT<T> y = x->value;
  y.scale_inplace(static_cast<T>(s));
  return detail_ad::make_node<T>(std::move(y), "scale", {x}, [s](NodeT<T>& n) {
    detail_ad::ensure_grad(*n.inputs[0]).grad.axpy(static_cast<T>(s), n.grad);
  });
}

/// Maps raw pixels [0,255] to loss-net input: x/255 - mean[c].
template <typename T>
VarT<T> normalize_image(VarT<T> x, std::array<T, 3> channel_means) {
  const Shape s = x->value.shape();
  if (s.c != 3) throw std::invalid_argument("normalize_image: expects 3 channels, got " + s.str());
  TensorT<T> y = x->value;
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < 3; ++c) {
      T* p = y.data() + (static_cast<size_t>(b) * 3 + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) p[i] = p[i] / T(255) - channel_means[c];
    }
  return detail_ad::make_node<T>(std::move(y), "normalize_image", {x}, [](NodeT<T>& n) {
    detail_ad::ensure_grad(*n.inputs[0]).grad.axpy(T(1) / T(255), n.grad);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
VarT<T> sum(VarT<T> x) {
  TensorT<T> y(1, 1, 1, 1);
  y[0] = static_cast<T>(x->value.sum());
  return detail_ad::make_node<T>(std::move(y), "sum", {x}, [](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    const T g = n.grad[0];
    for (std::int64_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += g;
  });
}

template <typename T>
VarT<T> sum_sq(VarT<T> x) {
  TensorT<T> y(1, 1, 1, 1);
  y[0] = static_cast<T>(x->value.dot(x->value));
  return detail_ad::make_node<T>(std::move(y), "sum_sq", {x}, [](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    const T g = T(2) * n.grad[0];
    for (std::int64_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += g * n.inputs[0]->value[i];
  });
}

/// Un-normalized Gram matrix F F^T of the (channels x pixels) reshape.
/// Output shape (1, 1, C, C).
template <typename T>
VarT<T> gram(VarT<T> x) {
  const Shape s = x->value.shape();
  if (s.n != 1) {
    throw std::invalid_argument("gram: batch must be 1, got " + s.str());
  }
  const int C = s.c;
  const std::int64_t M = static_cast<std::int64_t>(s.h) * s.w;
  TensorT<T> g(1, 1, C, C);
  Eigen::Map<const purify::detail::MatRM<T>> F(x->value.data(), C, M);
  Eigen::Map<purify::detail::MatRM<T>> G(g.data(), C, C);
  G.noalias() = F * F.transpose();
  return detail_ad::make_node<T>(std::move(g), "gram", {x}, [C, M](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    Eigen::Map<const purify::detail::MatRM<T>> F(n.inputs[0]->value.data(), C, M);
    Eigen::Map<const purify::detail::MatRM<T>> dG(n.grad.data(), C, C);
    Eigen::Map<purify::detail::MatRM<T>> dF(in.grad.data(), C, M);
    dF.noalias() += (dG + dG.transpose()) * F;
  });
}

/// Anisotropic squared total variation over every channel of every batch item.
template <typename T>
VarT<T> tv(VarT<T> x) {
  const Shape s = x->value.shape();
  double acc = 0.0;
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int xx = 0; xx < s.w; ++xx) {
          const double v = static_cast<double>(x->value.at(b, c, y, xx));
          if (y + 1 < s.h) {
            const double d = static_cast<double>(x->value.at(b, c, y + 1, xx)) - v;
            acc += d * d;
          }
          if (xx + 1 < s.w) {
            const double d = static_cast<double>(x->value.at(b, c, y, xx + 1)) - v;
            acc += d * d;
          }
        }
  TensorT<T> y(1, 1, 1, 1);
  y[0] = static_cast<T>(acc);
  return detail_ad::make_node<T>(std::move(y), "tv", {x}, [s](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    const T g = n.grad[0];
    const auto& v = n.inputs[0]->value;
    for (int b = 0; b < s.n; ++b)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            if (y + 1 < s.h) {
              const T d = v.at(b, c, y + 1, xx) - v.at(b, c, y, xx);
              in.grad.at(b, c, y + 1, xx) += g * T(2) * d;
              in.grad.at(b, c, y, xx) -= g * T(2) * d;
            }
            if (xx + 1 < s.w) {
              const T d = v.at(b, c, y, xx + 1) - v.at(b, c, y, xx);
              in.grad.at(b, c, y, xx + 1) += g * T(2) * d;
              in.grad.at(b, c, y, xx) -= g * T(2) * d;
            }
          }
  });
}

// ---------------------------------------------------------------------------
// Structure ops

template <typename T>
VarT<T> concat_channels(VarT<T> a, VarT<T> b) {
  const Shape as = a->value.shape(), bs = b->value.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw std::invalid_argument("concat_channels: spatial/batch mismatch " + as.str() + " vs " +
                                bs.str());
  }
  TensorT<T> y(as.n, as.c + bs.c, as.h, as.w);
  const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a->value.data() + static_cast<size_t>(n) * as.c * plane, as.c * plane,
                y.data() + static_cast<size_t>(n) * (as.c + bs.c) * plane);
    std::copy_n(b->value.data() + static_cast<size_t>(n) * bs.c * plane, bs.c * plane,
                y.data() + static_cast<size_t>(n) * (as.c + bs.c) * plane + as.c * plane);
  }
  return detail_ad::make_node<T>(std::move(y), "concat_channels", {a, b}, [as, bs](NodeT<T>& n) {
    const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
    for (int b = 0; b < as.n; ++b) {
      const T* g = n.grad.data() + static_cast<size_t>(b) * (as.c + bs.c) * plane;
      if (n.inputs[0]->requires_grad) {
        auto& ag = detail_ad::ensure_grad(*n.inputs[0]).grad;
        T* dst = ag.data() + static_cast<size_t>(b) * as.c * plane;
        for (std::int64_t i = 0; i < as.c * plane; ++i) dst[i] += g[i];
      }
      if (n.inputs[1]->requires_grad) {
        auto& bg = detail_ad::ensure_grad(*n.inputs[1]).grad;
        T* dst = bg.data() + static_cast<size_t>(b) * bs.c * plane;
        for (std::int64_t i = 0; i < bs.c * plane; ++i) dst[i] += g[as.c * plane + i];
      }
    }
  });
}

template <typename T>
VarT<T> pad_reflect(VarT<T> x, int top, int bottom, int left, int right) {
  const Shape s = x->value.shape();
  const int m = std::max({top, bottom, left, right});
  if (std::min({top, bottom, left, right}) < 0 || m >= s.h || m >= s.w) {
    throw std::invalid_argument("pad_reflect: padding invalid for " + s.str());
  }
  auto mirror = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
  };
  const int ho = s.h + top + bottom, wo = s.w + left + right;
  TensorT<T> y(s.n, s.c, ho, wo);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
          y.at(b, c, oy, ox) = x->value.at(b, c, mirror(oy - top, s.h), mirror(ox - left, s.w));
  return detail_ad::make_node<T>(
      std::move(y), "pad_reflect", {x}, [s, top, left, ho, wo, mirror](NodeT<T>& n) {
        auto& in = detail_ad::ensure_grad(*n.inputs[0]);
        for (int b = 0; b < s.n; ++b)
          for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox)
                in.grad.at(b, c, mirror(oy - top, s.h), mirror(ox - left, s.w)) +=
                    n.grad.at(b, c, oy, ox);
      });
}

template <typename T>
VarT<T> pad_reflect(VarT<T> x, int p) {
  return pad_reflect(std::move(x), p, p, p, p);
}

template <typename T>
VarT<T> crop(VarT<T> x, int y0, int x0, int h, int w) {
  const Shape s = x->value.shape();
  if (y0 < 0 || x0 < 0 || y0 + h > s.h || x0 + w > s.w || h < 1 || w < 1) {
    throw std::invalid_argument("crop: region out of bounds for " + s.str());
  }
  TensorT<T> y(s.n, s.c, h, w);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) y.at(b, c, yy, xx) = x->value.at(b, c, y0 + yy, x0 + xx);
  return detail_ad::make_node<T>(std::move(y), "crop", {x}, [y0, x0, h, w](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    const Shape s = n.grad.shape();
    for (int b = 0; b < s.n; ++b)
      for (int c = 0; c < s.c; ++c)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            in.grad.at(b, c, y0 + yy, x0 + xx) += n.grad.at(b, c, yy, xx);
  });
}

// ---------------------------------------------------------------------------
// Normalization / regularization layers

template <typename T>
struct BatchNormStateT {
  TensorT<T> running_mean;  // (1,C,1,1)
  TensorT<T> running_var;

  explicit BatchNormStateT(int channels = 0) {
    if (channels > 0) {
      running_mean = TensorT<T>(1, channels, 1, 1);
      running_var = TensorT<T>::ones({1, channels, 1, 1});
    }
  }
};

using BatchNormState = BatchNormStateT<float>;

/// Spatial batch normalization. Training mode normalizes with batch
/// statistics and updates the running estimates; eval mode uses the stored
/// running statistics.
template <typename T>
VarT<T> batch_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, BatchNormStateT<T>* state,
                   bool training, double momentum = 0.1, double eps = 1e-5) {
  const Shape s = x->value.shape();
  const int C = s.c;
  if (gamma->value.numel() != C || beta->value.numel() != C) {
    throw std::invalid_argument("batch_norm: parameter size mismatch for " + s.str());
  }
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  const std::int64_t count = static_cast<std::int64_t>(s.n) * plane;

  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double m = 0.0, v = 0.0;
    if (training) {
      for (int b = 0; b < s.n; ++b) {
        const T* p = x->value.data() + (static_cast<size_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) m += static_cast<double>(p[i]);
      }
      m /= static_cast<double>(count);
      for (int b = 0; b < s.n; ++b) {
        const T* p = x->value.data() + (static_cast<size_t>(b) * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(count);
      if (state) {
        state->running_mean[c] =
            static_cast<T>((1.0 - momentum) * state->running_mean[c] + momentum * m);
        state->running_var[c] =
            static_cast<T>((1.0 - momentum) * state->running_var[c] + momentum * v);
      }
    } else {
      if (!state) throw std::invalid_argument("batch_norm: eval mode requires running statistics");
      m = static_cast<double>(state->running_mean[c]);
      v = static_cast<double>(state->running_var[c]);
    }
    (*mean)[c] = m;
    (*inv_std)[c] = 1.0 / std::sqrt(v + eps);
  }

  TensorT<T> y(s);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < C; ++c) {
      const T* p = x->value.data() + (static_cast<size_t>(b) * C + c) * plane;
      T* q = y.data() + (static_cast<size_t>(b) * C + c) * plane;
      const double g = static_cast<double>(gamma->value[c]);
      const double bt = static_cast<double>(beta->value[c]);
      for (std::int64_t i = 0; i < plane; ++i)
        q[i] = static_cast<T>((static_cast<double>(p[i]) - (*mean)[c]) * (*inv_std)[c] * g + bt);
    }

  return detail_ad::make_node<T>(
      std::move(y), "batch_norm", {x, gamma, beta},
      [s, C, plane, count, mean, inv_std, training](NodeT<T>& n) {
        const auto& xv = n.inputs[0]->value;
        const auto& gv = n.inputs[1]->value;
        for (int c = 0; c < C; ++c) {
          // Per-channel reductions of dy and dy*xhat.
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int b = 0; b < s.n; ++b) {
            const T* dy = n.grad.data() + (static_cast<size_t>(b) * C + c) * plane;
            const T* xp = xv.data() + (static_cast<size_t>(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              const double xhat = (static_cast<double>(xp[i]) - (*mean)[c]) * (*inv_std)[c];
              sum_dy += static_cast<double>(dy[i]);
              sum_dy_xhat += static_cast<double>(dy[i]) * xhat;
            }
          }
          if (n.inputs[1]->requires_grad)
            detail_ad::ensure_grad(*n.inputs[1]).grad[c] += static_cast<T>(sum_dy_xhat);
          if (n.inputs[2]->requires_grad)
            detail_ad::ensure_grad(*n.inputs[2]).grad[c] += static_cast<T>(sum_dy);
          if (n.inputs[0]->requires_grad) {
            auto& xg = detail_ad::ensure_grad(*n.inputs[0]).grad;
            const double g = static_cast<double>(gv[c]);
            const double mean_dy = sum_dy / static_cast<double>(count);
            const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(count);
            for (int b = 0; b < s.n; ++b) {
              const T* dy = n.grad.data() + (static_cast<size_t>(b) * C + c) * plane;
              const T* xp = xv.data() + (static_cast<size_t>(b) * C + c) * plane;
              T* dx = xg.data() + (static_cast<size_t>(b) * C + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                const double xhat = (static_cast<double>(xp[i]) - (*mean)[c]) * (*inv_std)[c];
                double d = static_cast<double>(dy[i]);
                if (training) d -= mean_dy + xhat * mean_dy_xhat;
                dx[i] += static_cast<T>(g * (*inv_std)[c] * d);
              }
            }
          }
        }
      });
}

/// Inverted dropout with an explicit engine; identity when not training.
template <typename T>
VarT<T> dropout(VarT<T> x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  auto mask = std::make_shared<TensorT<T>>(x->value.shape());
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  TensorT<T> y = x->value;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    const T m = keep(rng) ? scale : T(0);
    (*mask)[i] = m;
    y[i] *= m;
  }
  return detail_ad::make_node<T>(std::move(y), "dropout", {x}, [mask](NodeT<T>& n) {
    auto& in = detail_ad::ensure_grad(*n.inputs[0]);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) in.grad[i] += n.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Backward pass

/// Gradients for the requested leaves; leaves not connected to the loss get a
/// zero gradient and are listed in `disconnected`.
template <typename T>
struct GradientMapT {
  std::unordered_map<const NodeT<T>*, TensorT<T>> grads;
  std::vector<const NodeT<T>*> disconnected;

  const TensorT<T>& at(const VarT<T>& v) const {
    auto it = grads.find(v.get());
    if (it == grads.end()) throw std::out_of_range("GradientMap: leaf not requested");
    return it->second;
  }
  bool is_disconnected(const VarT<T>& v) const {
    return std::find(disconnected.begin(), disconnected.end(), v.get()) != disconnected.end();
  }
};

using GradientMap = GradientMapT<float>;

/// Reverse-mode sweep from a scalar loss. With `release_memory` the values and
/// gradients of interior nodes are freed as soon as no pending rule needs them
/// (every consumer runs before its producer in reverse topological order).
template <typename T>
GradientMapT<T> backward(const VarT<T>& loss, const std::vector<VarT<T>>& leaves,
                         bool release_memory = false) {
  if (loss->value.shape() != Shape{1, 1, 1, 1}) {
    throw std::invalid_argument("backward: loss must be scalar (1,1,1,1), got " +
                                loss->value.shape().str());
  }
  // Iterative post-order over grad-requiring nodes.
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> visited;
  std::vector<std::pair<NodeT<T>*, size_t>> stack;
  if (loss->requires_grad) stack.emplace_back(loss.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && visited.count(node)) {
      stack.pop_back();
      continue;
    }
    visited.insert(node);
    bool descended = false;
    while (next < node->inputs.size()) {
      NodeT<T>* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        stack.emplace_back(child, 0);
        descended = true;
        break;
      }
    }
    if (!descended && next >= node->inputs.size()) {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT<T>* n : order) n->grad = TensorT<T>();
  loss->grad = TensorT<T>::ones({1, 1, 1, 1});

  GradientMapT<T> result;
  std::unordered_set<const NodeT<T>*> leaf_set;
  for (const auto& l : leaves) leaf_set.insert(l.get());

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->grad.empty()) continue;  // not reached from the loss
    if (n->backward_fn) n->backward_fn(*n);
    if (leaf_set.count(n)) result.grads.emplace(n, n->grad);
    if (release_memory && !n->is_leaf && n != loss.get()) {
      n->grad = TensorT<T>();
      n->value = TensorT<T>();
    }
  }

  for (const auto& l : leaves) {
    if (!result.grads.count(l.get())) {
      result.grads.emplace(l.get(), TensorT<T>(l->value.shape()));
      result.disconnected.push_back(l.get());
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite differences (test oracle)

/// Central-difference gradient estimate of a scalar objective.
template <typename T>
TensorT<T> finite_diff_gradient(const std::function<double(const TensorT<T>&)>& objective,
                                const TensorT<T>& x, double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("finite_diff_gradient: epsilon must be > 0");
  TensorT<T> g(x.shape());
  TensorT<T> probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + static_cast<T>(epsilon);
    const double fp = objective(probe);
    probe[i] = orig - static_cast<T>(epsilon);
    const double fm = objective(probe);
    probe[i] = orig;
    g[i] = static_cast<T>((fp - fm) / (2.0 * epsilon));
  }
  return g;
}

}  // namespace purify::ad
