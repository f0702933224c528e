#pragma once

// Shared test machinery: relative error, brute-force reference loops, and a
// tiny two-layer feature net in double precision for gradient checking.

#include <cmath>
#include <map>
#include <string>

#include "purify/autodiff.hpp"
#include "purify/region_loss.hpp"
#include "purify/tensor.hpp"

namespace testutil {

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double max_rel_err(const purify::TensorD& got, const purify::TensorD& want) {
  double scale = 0.0;
  for (std::int64_t i = 0; i < want.numel(); ++i) {
    scale = std::max(scale, std::abs(want[i]));
  }
  scale = std::max(scale, 1e-8);
  double worst = 0.0;
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

/// Reference cross-correlation: six nested loops, no tiling, no GEMM.
template <typename T>
purify::TensorT<T> conv_loops(const purify::TensorT<T>& x, const purify::TensorT<T>& k,
                              int stride, int pad) {
  const purify::Shape xs = x.shape(), ks = k.shape();
  const int ho = (xs.h + 2 * pad - ks.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ks.w) / stride + 1;
  purify::TensorT<T> y(xs.n, ks.n, ho, wo);
  for (int b = 0; b < xs.n; ++b)
    for (int oc = 0; oc < ks.n; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < xs.c; ++ic)
            for (int ky = 0; ky < ks.h; ++ky)
              for (int kx = 0; kx < ks.w; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += static_cast<double>(x.at(b, ic, iy, ix)) * k.at(oc, ic, ky, kx);
              }
          y.at(b, oc, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

/// Reference transposed convolution: scatter-add of stamped kernels.
/// Kernel layout (in_channels, out_channels, kh, kw).
template <typename T>
purify::TensorT<T> conv_transpose_loops(const purify::TensorT<T>& x, const purify::TensorT<T>& k,
                                        int stride, int pad) {
  const purify::Shape xs = x.shape(), ks = k.shape();
  const int ho = (xs.h - 1) * stride - 2 * pad + ks.h;
  const int wo = (xs.w - 1) * stride - 2 * pad + ks.w;
  purify::TensorT<T> y(xs.n, ks.c, ho, wo);
  for (int b = 0; b < xs.n; ++b)
    for (int ic = 0; ic < xs.c; ++ic)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix) {
          const T v = x.at(b, ic, iy, ix);
          for (int oc = 0; oc < ks.c; ++oc)
            for (int ky = 0; ky < ks.h; ++ky)
              for (int kx = 0; kx < ks.w; ++kx) {
                const int oy = iy * stride + ky - pad;
                const int ox = ix * stride + kx - pad;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                y.at(b, oc, oy, ox) += v * k.at(ic, oc, ky, kx);
              }
        }
  return y;
}

/// Two conv layers with a pool between, tapped as "a1" (1x4x8x8) and "a2"
/// (1x6x4x4) for an 8x8 RGB input. Double precision isolates truncation from
/// logic when comparing against central differences.
struct TwoLayerNet {
  purify::TensorD k1 = purify::TensorD::gaussian({4, 3, 3, 3}, 11, 0.0, 0.4);
  purify::TensorD b1 = purify::TensorD::gaussian({1, 4, 1, 1}, 12, 0.0, 0.1);
  purify::TensorD k2 = purify::TensorD::gaussian({6, 4, 3, 3}, 13, 0.0, 0.3);
  purify::TensorD b2 = purify::TensorD::gaussian({1, 6, 1, 1}, 14, 0.0, 0.1);

  std::map<std::string, purify::ad::VarT<double>> features(purify::ad::VarT<double> image) const {
    namespace ad = purify::ad;
    auto a1 = ad::conv2d(image, ad::constant(k1), ad::constant(b1), 1, 1, /*fuse_relu=*/true);
    auto pooled = ad::max_pool2d(a1, 2, 2);
    auto a2 = ad::conv2d(pooled, ad::constant(k2), ad::constant(b2), 1, 1, /*fuse_relu=*/true);
    return {{"a1", a1}, {"a2", a2}};
  }
};

inline purify::TapSet two_layer_taps() {
  purify::TapSet taps;
  taps.global_content = "a1";
  taps.local_content = "a2";
  taps.global_style = {"a1"};
  taps.local_style = {"a2"};
  return taps;
}

/// Loss context over the two-layer net: content targets from `target`, region
/// maps in (0,1), style Grams from `style` masked with its own maps.
inline purify::LossContextT<double> two_layer_context(const TwoLayerNet& net,
                                                      const purify::LossConfig& cfg,
                                                      const purify::TensorD& target,
                                                      const purify::TensorD& style) {
  namespace ad = purify::ad;
  using purify::TensorD;
  purify::LossContextT<double> ctx;
  ctx.cfg = cfg;
  ctx.dims["a1"] = {4, 64};
  ctx.dims["a2"] = {6, 16};

  auto target_feats = net.features(ad::constant(target));
  for (const auto& layer : {"a1", "a2"}) {
    ctx.content_I.emplace(layer, target_feats.at(layer)->value);
  }
  std::map<std::string, TensorD> att_s, bkgd_s;
  int seed = 40;
  for (const auto& [layer, dims] : std::map<std::string, purify::Shape>{
           {"a1", {1, 1, 8, 8}}, {"a2", {1, 1, 4, 4}}}) {
    TensorD pos = TensorD::uniform(dims, seed++, 0.05, 0.95);
    TensorD neg(dims);
    for (std::int64_t i = 0; i < pos.numel(); ++i) neg[i] = 1.0 - pos[i];
    ctx.att_I.emplace(layer, pos);
    ctx.bkgd_I.emplace(layer, neg);
    att_s.emplace(layer, TensorD::uniform(dims, seed++, 0.05, 0.95));
    TensorD sneg(dims);
    for (std::int64_t i = 0; i < dims.numel(); ++i) sneg[i] = 1.0 - att_s.at(layer)[i];
    bkgd_s.emplace(layer, sneg);
  }
  auto style_feats = net.features(ad::constant(style));
  ctx.gram_bkgd_S.emplace(
      "a1", purify::masked_gram(style_feats.at("a1")->value, bkgd_s.at("a1")));
  ctx.gram_att_S.emplace(
      "a2", purify::masked_gram(style_feats.at("a2")->value, att_s.at("a2")));
  return ctx;
}

/// Autodiff gradient of the two-layer objective w.r.t. the input image.
inline purify::TensorD two_layer_grad(const TwoLayerNet& net,
                                      const purify::LossContextT<double>& ctx,
                                      const purify::TensorD& x, bool with_tv) {
  namespace ad = purify::ad;
  auto image = ad::leaf(x, "x");
  auto feats = net.features(image);
  auto loss = purify::region_loss_graph<double>(feats, ctx, with_tv ? image : nullptr, nullptr);
  return ad::backward(loss, {image}).at(image);
}

/// Same objective as a plain scalar function (for finite differences).
inline double two_layer_value(const TwoLayerNet& net, const purify::LossContextT<double>& ctx,
                              const purify::TensorD& x, bool with_tv) {
  namespace ad = purify::ad;
  auto image = ad::constant(x);
  auto feats = net.features(image);
  return purify::region_loss_graph<double>(feats, ctx, with_tv ? image : nullptr, nullptr)
      ->value[0];
}

}  // namespace testutil
