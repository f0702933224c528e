#pragma once

#include <map>
#include <string>
#include <vector>

#include "purify/autodiff.hpp"
#include "purify/lossnet.hpp"
#include "purify/tensor.hpp"

namespace purify {

/// Contrastive pair (att+, att-); att- is stored as 1 - att+ so the
/// pointwise sum-to-one constraint holds by construction.
template <typename T>
struct AttentionPairT {
  TensorT<T> pos;
  TensorT<T> neg;

  static AttentionPairT from_positive(TensorT<T> p) {
    AttentionPairT pair;
    pair.neg = TensorT<T>(p.shape());
    for (std::int64_t i = 0; i < p.numel(); ++i) pair.neg[i] = T(1) - p[i];
    pair.pos = std::move(p);
    return pair;
  }
};

using AttentionPair = AttentionPairT<float>;

/// Differentiable pair for the learned subnet path.
template <typename T>
struct AttentionPairVarT {
  ad::VarT<T> pos;
  ad::VarT<T> neg;
};

/// 1x1 convolution weights over the concatenated (f_full, f_mask) channels
/// plus a scalar bias.
template <typename T>
struct AttentionSubnetParamsT {
  ad::VarT<T> weight;  // shape (1, C_full + C_mask, 1, 1)
  ad::VarT<T> bias;    // shape (1,1,1,1)
};

using AttentionSubnetParams = AttentionSubnetParamsT<float>;

/// att+ = sigmoid(weight * concat(f_full, f_mask) + b), att- = 1 - att+.
template <typename T>
AttentionPairVarT<T> attention_maps(ad::VarT<T> f_full, ad::VarT<T> f_mask,
                                    const AttentionSubnetParamsT<T>& params) {
  const Shape fs = f_full->value.shape(), ms = f_mask->value.shape();
  if (fs.h != ms.h || fs.w != ms.w || fs.n != ms.n) {
    throw std::invalid_argument("attention_maps: spatial mismatch " + fs.str() + " vs " + ms.str());
  }
  auto joint = ad::concat_channels(f_full, f_mask);
  auto logits = ad::conv2d(joint, params.weight, params.bias, 1, 0);
  auto pos = ad::sigmoid(logits);
  auto neg = ad::sub(ad::constant(TensorT<T>::ones(pos->value.shape())), pos);
  return {pos, neg};
}

/// Deterministic fallback: the pooled mask channels designated as the
/// attention region drive att+ directly.
inline AttentionPair mask_to_attention(const Tensor& mask, const std::string& layer,
                                       const std::vector<int>& attention_channels = {0}) {
  const Shape s = mask.shape();
  Tensor att_src(s.n, 1, s.h, s.w);
  for (int ch : attention_channels) {
    if (ch < 0 || ch >= s.c) {
      throw std::invalid_argument("mask_to_attention: channel " + std::to_string(ch) +
                                  " out of range for mask " + s.str());
    }
    const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
    for (int b = 0; b < s.n; ++b) {
      const float* src = mask.data() + (static_cast<size_t>(b) * s.c + ch) * plane;
      float* dst = att_src.data() + static_cast<size_t>(b) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
  }
  return AttentionPair::from_positive(downsample_mask(att_src, layer));
}

/// The three feature streams of the framework.
struct RegionStreams {
  FeatureBundle full;
  FeatureBundle attention;
  FeatureBundle background;
};

/// f_attention[l] = f_full[l] (x) att+[l], f_background[l] = f_full[l] (x) att-[l].
inline RegionStreams build_streams(const FeatureBundle& bundle_full,
                                   const std::map<std::string, AttentionPair>& pair_per_layer) {
  RegionStreams streams;
  streams.full = bundle_full;
  for (const auto& [layer, feat] : bundle_full.features) {
    auto it = pair_per_layer.find(layer);
    if (it == pair_per_layer.end()) {
      throw std::invalid_argument("build_streams: no attention pair for layer \"" + layer + "\"");
    }
    const AttentionPair& pair = it->second;
    const Shape fs = feat.shape(), as = pair.pos.shape();
    if (fs.h != as.h || fs.w != as.w) {
      throw std::invalid_argument("build_streams: attention map " + as.str() +
                                  " does not match features " + fs.str() + " at \"" + layer + "\"");
    }
    Tensor att(fs), bkgd(fs);
    const std::int64_t plane = static_cast<std::int64_t>(fs.h) * fs.w;
    for (int c = 0; c < fs.c; ++c) {
      const float* f = feat.data() + static_cast<size_t>(c) * plane;
      float* a = att.data() + static_cast<size_t>(c) * plane;
      float* g = bkgd.data() + static_cast<size_t>(c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        a[i] = f[i] * pair.pos[i];
        g[i] = f[i] * pair.neg[i];
      }
    }
    streams.attention.features.emplace(layer, std::move(att));
    streams.background.features.emplace(layer, std::move(bkgd));
  }
  return streams;
}

}  // namespace purify
