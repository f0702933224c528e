#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "purify/attention.hpp"
#include "purify/autodiff.hpp"
#include "purify/lossnet.hpp"

namespace purify {

/// All scalar weights of the combined objective.
struct LossConfig {
  double alpha = 100.0;     // content layer weight (alpha_l at every tapped layer)
  double beta = 10000.0;    // style layer weight (beta_l at every tapped layer)
  double lambda_g = 1.0;    // global-term weight
  double lambda_l = 1.0;    // local-term weight
  double theta = 1e-6;      // total-variation strength
  int mask_channels = 2;    // C in the channel sums
  TapSet taps;

  /// Optional per-layer overrides; fall back to the scalars above.
  std::map<std::string, double> alpha_per_layer;
  std::map<std::string, double> beta_per_layer;

  double alpha_for(const std::string& layer) const {
    auto it = alpha_per_layer.find(layer);
    return it == alpha_per_layer.end() ? alpha : it->second;
  }
  double beta_for(const std::string& layer) const {
    auto it = beta_per_layer.find(layer);
    return it == beta_per_layer.end() ? beta : it->second;
  }

  void validate() const {
    auto check = [](double v, const char* what) {
      if (v < 0.0 || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("LossConfig: ") + what + " must be >= 0");
      }
    };
    check(alpha, "alpha");
    check(beta, "beta");
    check(lambda_g, "lambda_g");
    check(lambda_l, "lambda_l");
    check(theta, "theta");
    for (const auto& [k, v] : alpha_per_layer) check(v, k.c_str());
    for (const auto& [k, v] : beta_per_layer) check(v, k.c_str());
    if (mask_channels < 1) throw std::invalid_argument("LossConfig: mask_channels must be >= 1");
  }
};

/// Every term of the objective, totalled and per layer (raw, unweighted).
struct LossBreakdown {
  std::map<std::string, double> gc_per_layer, lc_per_layer, gs_per_layer, ls_per_layer;
  double l_gc = 0, l_lc = 0, l_feat = 0;
  double l_gs = 0, l_ls = 0, l_style = 0;
  double l_tv = 0;
  double total = 0;
};

/// CSV header + row emission for iteration curves.
inline void write_curve_header(std::ostream& os) {
  os << "iter,l_gc,l_lc,l_gs,l_ls,l_tv,total\n";
}
inline void write_curve_row(std::ostream& os, int iter, const LossBreakdown& b) {
  os << iter << "," << b.l_gc << "," << b.l_lc << "," << b.l_gs << "," << b.l_ls << "," << b.l_tv
     << "," << b.total << "\n";
}

// ---------------------------------------------------------------------------
// Individual loss terms (value forms)

namespace loss_detail {

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
}

}  // namespace loss_detail

/// Sum_c 1/(2 N M) Sum_ij (F[O] - F[I])^2 — the full-stream content gap; the
/// channel sum over the C mask channels contributes a factor C.
template <typename T>
double content_loss_global(const TensorT<T>& f_o, const TensorT<T>& f_i, int mask_channels) {
  loss_detail::check_same_shape(f_o, f_i, "content_loss_global");
  const Shape s = f_o.shape();
  const double nm = static_cast<double>(s.c) * s.h * s.w;
  double acc = 0.0;
  for (std::int64_t i = 0; i < f_o.numel(); ++i) {
    const double d = static_cast<double>(f_o[i]) - static_cast<double>(f_i[i]);
    acc += d * d;
  }
  return static_cast<double>(mask_channels) / (2.0 * nm) * acc;
}

/// Attention-masked content gap, same normalization.
template <typename T>
double content_loss_local(const TensorT<T>& f_o, const TensorT<T>& f_i, const TensorT<T>& att,
                          int mask_channels) {
  loss_detail::check_same_shape(f_o, f_i, "content_loss_local");
  const Shape s = f_o.shape(), as = att.shape();
  if (as.h != s.h || as.w != s.w) {
    throw std::invalid_argument("content_loss_local: attention map " + as.str() +
                                " does not match features " + s.str());
  }
  const double nm = static_cast<double>(s.c) * s.h * s.w;
  const std::int64_t plane = static_cast<std::int64_t>(s.h) * s.w;
  double acc = 0.0;
  for (int c = 0; c < s.c; ++c) {
    const T* o = f_o.data() + static_cast<size_t>(c) * plane;
    const T* in = f_i.data() + static_cast<size_t>(c) * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      const double d = (static_cast<double>(o[i]) - static_cast<double>(in[i])) *
                       static_cast<double>(att[i]);
      acc += d * d;
    }
  }
  return static_cast<double>(mask_channels) / (2.0 * nm) * acc;
}

/// Gram of region-weighted features: masking precedes the product.
template <typename T>
TensorT<T> masked_gram(const TensorT<T>& f_full, const TensorT<T>& region) {
  const Shape s = f_full.shape(), rs = region.shape();
  if (s.n != 1) throw std::invalid_argument("masked_gram: batch must be 1, got " + s.str());
  if (rs.h != s.h || rs.w != s.w || rs.c != 1) {
    throw std::invalid_argument("masked_gram: region map " + rs.str() +
                                " does not match features " + s.str());
  }
  auto masked = ad::mul(ad::constant(f_full), ad::constant(region));
  return ad::gram(masked)->value;
}

/// 1/(4 N^2 M^2) squared Frobenius gap of region Grams, channel-summed.
template <typename T>
double style_gap(const TensorT<T>& g_o, const TensorT<T>& g_s, int n_l, std::int64_t m_l,
                 int mask_channels) {
  loss_detail::check_same_shape(g_o, g_s, "style loss");
  const double denom = 4.0 * static_cast<double>(n_l) * n_l * static_cast<double>(m_l) * m_l;
  double acc = 0.0;
  for (std::int64_t i = 0; i < g_o.numel(); ++i) {
    const double d = static_cast<double>(g_o[i]) - static_cast<double>(g_s[i]);
    acc += d * d;
  }
  return static_cast<double>(mask_channels) / denom * acc;
}

template <typename T>
double style_loss_global(const TensorT<T>& g_bkgd_o, const TensorT<T>& g_bkgd_s, int n_l,
                         std::int64_t m_l, int mask_channels) {
  return style_gap(g_bkgd_o, g_bkgd_s, n_l, m_l, mask_channels);
}

template <typename T>
double style_loss_local(const TensorT<T>& g_att_o, const TensorT<T>& g_att_s, int n_l,
                        std::int64_t m_l, int mask_channels) {
  return style_gap(g_att_o, g_att_s, n_l, m_l, mask_channels);
}

/// Anisotropic squared total variation.
template <typename T>
double tv_loss(const TensorT<T>& image) {
  return static_cast<double>(ad::tv(ad::constant(image))->value[0]);
}

// ---------------------------------------------------------------------------
// Combined objective as a differentiable graph

/// Everything precomputed from I and S: content targets, region maps at every
/// tapped layer, and the style Gram targets (S masked with its own maps).
template <typename T>
struct LossContextT {
  LossConfig cfg;
  std::map<std::string, TensorT<T>> content_I;  // F_full[I] at content taps
  std::map<std::string, TensorT<T>> att_I;      // att+ of I per tapped layer (1,1,h,w)
  std::map<std::string, TensorT<T>> bkgd_I;     // att- of I
  std::map<std::string, TensorT<T>> gram_att_S;
  std::map<std::string, TensorT<T>> gram_bkgd_S;
  std::map<std::string, std::pair<int, std::int64_t>> dims;  // layer -> (N_l, M_l)
};

using LossContext = LossContextT<float>;

/// Builds the combined objective over the output-image feature graph. When
/// `image` is non-null and cfg.theta > 0, the smoothness (TV) term is
/// appended. Fills `breakdown` with the individual term values.
template <typename T>
ad::VarT<T> region_loss_graph(const std::map<std::string, ad::VarT<T>>& feats_o,
                              const LossContextT<T>& ctx, ad::VarT<T> image,
                              LossBreakdown* breakdown) {
  const LossConfig& cfg = ctx.cfg;
  cfg.validate();
  const int C = cfg.mask_channels;
  LossBreakdown local;
  ad::VarT<T> total;

  auto accumulate = [&total](ad::VarT<T> term) {
    total = total ? ad::add(total, term) : term;
  };
  auto term_value = [](const ad::VarT<T>& v) { return static_cast<double>(v->value[0]); };

  // Content: global tap unmasked, local tap attention-masked.
  for (bool global : {true, false}) {
    const std::string& layer = global ? cfg.taps.global_content : cfg.taps.local_content;
    const double lambda = global ? cfg.lambda_g : cfg.lambda_l;
    auto fo = feats_o.at(layer);
    const auto& fi = ctx.content_I.at(layer);
    const auto [n_l, m_l] = ctx.dims.at(layer);
    auto diff = ad::sub(fo, ad::constant(fi));
    if (!global) diff = ad::mul(diff, ad::constant(ctx.att_I.at(layer)));
    auto raw = ad::scale(ad::sum_sq(diff),
                         static_cast<double>(C) / (2.0 * static_cast<double>(n_l) * m_l));
    const double v = term_value(raw);
    if (global) {
      local.gc_per_layer[layer] += v;
      local.l_gc += v;
    } else {
      local.lc_per_layer[layer] += v;
      local.l_lc += v;
    }
    if (cfg.alpha_for(layer) * lambda != 0.0) {
      accumulate(ad::scale(raw, cfg.alpha_for(layer) * lambda));
    }
  }
  local.l_feat = cfg.lambda_g * local.l_gc + cfg.lambda_l * local.l_lc;

  // Style: global taps against background Grams, local taps against
  // attention Grams. Output streams use I's region maps, targets use S's.
  auto style_side = [&](const std::vector<std::string>& layers,
                        const std::map<std::string, TensorT<T>>& region_maps,
                        const std::map<std::string, TensorT<T>>& targets, double lambda,
                        bool global) {
    for (const auto& layer : layers) {
      auto fo = feats_o.at(layer);
      const auto [n_l, m_l] = ctx.dims.at(layer);
      auto masked = ad::mul(fo, ad::constant(region_maps.at(layer)));
      auto gap = ad::sub(ad::gram(masked), ad::constant(targets.at(layer)));
      const double denom = 4.0 * static_cast<double>(n_l) * n_l * static_cast<double>(m_l) * m_l;
      auto raw = ad::scale(ad::sum_sq(gap), static_cast<double>(C) / denom);
      const double v = term_value(raw);
      if (global) {
        local.gs_per_layer[layer] += v;
        local.l_gs += v;
      } else {
        local.ls_per_layer[layer] += v;
        local.l_ls += v;
      }
      if (cfg.beta_for(layer) * lambda != 0.0) {
        accumulate(ad::scale(raw, cfg.beta_for(layer) * lambda));
      }
    }
  };
  style_side(cfg.taps.global_style, ctx.bkgd_I, ctx.gram_bkgd_S, cfg.lambda_g, true);
  style_side(cfg.taps.local_style, ctx.att_I, ctx.gram_att_S, cfg.lambda_l, false);
  local.l_style = cfg.lambda_g * local.l_gs + cfg.lambda_l * local.l_ls;

  if (image && cfg.theta > 0.0) {
    auto tv_term = ad::tv(image);
    local.l_tv = term_value(tv_term);
    accumulate(ad::scale(tv_term, cfg.theta));
  }

  if (!total) total = ad::constant(TensorT<T>(1, 1, 1, 1));
  local.total = term_value(total);
  if (breakdown) *breakdown = local;
  return total;
}

}  // namespace purify
