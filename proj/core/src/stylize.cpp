#include "purify/stylize.hpp"

#include <cmath>
#include <set>

#include "purify/attention.hpp"

namespace purify {

void validate_rgb_mask_pair(const Tensor& image, const Tensor& mask) {
  const Shape is = image.shape(), ms = mask.shape();
  if (is.n != 1 || is.c != 3) {
    throw std::invalid_argument("RGB-mask pair: image must be 1x3xHxW, got " + is.str());
  }
  if (ms.n != 1 || ms.h != is.h || ms.w != is.w) {
    throw std::invalid_argument("RGB-mask pair: mask " + ms.str() + " does not match image " +
                                is.str());
  }
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    if (!(image[i] >= 0.f && image[i] <= 255.f)) {
      throw std::invalid_argument("RGB-mask pair: image pixels must lie in [0,255]");
    }
  }
  const std::int64_t plane = static_cast<std::int64_t>(ms.h) * ms.w;
  for (std::int64_t i = 0; i < plane; ++i) {
    double sum = 0.0;
    for (int c = 0; c < ms.c; ++c) {
      const float v = mask[static_cast<std::int64_t>(c) * plane + i];
      if (v < -1e-6f || v > 1.f + 1e-6f) {
        throw std::invalid_argument("RGB-mask pair: mask entries must lie in [0,1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      throw std::invalid_argument("RGB-mask pair: mask channels must sum to 1 at every pixel");
    }
  }
}

namespace {

/// Region maps for every tapped layer from an input-resolution mask.
void fill_region_maps(const Tensor& mask, const TapSet& taps,
                      const std::vector<int>& attention_channels,
                      std::map<std::string, Tensor>& att, std::map<std::string, Tensor>& bkgd) {
  for (const auto& layer : taps.all_layers()) {
    AttentionPair pair = mask_to_attention(mask, layer, attention_channels);
    att.emplace(layer, std::move(pair.pos));
    bkgd.emplace(layer, std::move(pair.neg));
  }
}

void fill_dims(LossContext& ctx, const LossConfig& cfg, int h, int w) {
  const auto& spec = LossNetSpec::vgg16();
  for (const auto& layer : cfg.taps.all_layers()) {
    const auto [lh, lw] = spec.layer_dims(layer, h, w);
    ctx.dims[layer] = {spec.layer(layer).out_channels,
                       static_cast<std::int64_t>(lh) * lw};
  }
}

}  // namespace

LossContext build_loss_context(const Tensor& input, const Tensor& input_mask, const Tensor& style,
                               const Tensor& style_mask, const LossConfig& cfg,
                               const LossNetWeights& weights,
                               const std::vector<int>& attention_channels) {
  cfg.validate();
  validate_rgb_mask_pair(input, input_mask);
  validate_rgb_mask_pair(style, style_mask);

  LossContext ctx;
  ctx.cfg = cfg;
  fill_dims(ctx, cfg, input.shape().h, input.shape().w);

  FeatureBundle feats_i = extract_features(input, weights, cfg.taps);
  for (const auto& layer : cfg.taps.content_layers()) {
    ctx.content_I.emplace(layer, feats_i.features.at(layer));
  }
  fill_region_maps(input_mask, cfg.taps, attention_channels, ctx.att_I, ctx.bkgd_I);

  FeatureBundle feats_s = extract_features(style, weights, cfg.taps);
  std::map<std::string, Tensor> att_s, bkgd_s;
  fill_region_maps(style_mask, cfg.taps, attention_channels, att_s, bkgd_s);
  for (const auto& layer : cfg.taps.global_style) {
    ctx.gram_bkgd_S.emplace(layer,
                            masked_gram(feats_s.features.at(layer), bkgd_s.at(layer)));
  }
  for (const auto& layer : cfg.taps.local_style) {
    ctx.gram_att_S.emplace(layer, masked_gram(feats_s.features.at(layer), att_s.at(layer)));
  }
  return ctx;
}

LossContext build_baseline_context(const Tensor& input, const Tensor& style, const LossConfig& cfg,
                                   const LossNetWeights& weights) {
  cfg.validate();
  LossContext ctx;
  ctx.cfg = cfg;
  fill_dims(ctx, cfg, input.shape().h, input.shape().w);

  const auto& spec = LossNetSpec::vgg16();
  FeatureBundle feats_i = extract_features(input, weights, cfg.taps);
  for (const auto& layer : cfg.taps.content_layers()) {
    ctx.content_I.emplace(layer, feats_i.features.at(layer));
  }
  FeatureBundle feats_s = extract_features(style, weights, cfg.taps);
  auto ones_map = [&](const std::string& layer, const Tensor& ref) {
    return Tensor::ones({1, 1, ref.shape().h, ref.shape().w});
  };
  // Attention covers everything, so the background stream (and with it the
  // global style term) is identically zero and the comparison objective is
  // exactly content + unmasked Gram style at the local taps.
  for (const auto& layer : cfg.taps.all_layers()) {
    const auto [lh, lw] = spec.layer_dims(layer, input.shape().h, input.shape().w);
    ctx.att_I.emplace(layer, Tensor::ones({1, 1, lh, lw}));
    ctx.bkgd_I.emplace(layer, Tensor::zeros({1, 1, lh, lw}));
  }
  for (const auto& layer : cfg.taps.global_style) {
    const int n_l = spec.layer(layer).out_channels;
    ctx.gram_bkgd_S.emplace(layer, Tensor::zeros({1, 1, n_l, n_l}));
  }
  for (const auto& layer : cfg.taps.local_style) {
    ctx.gram_att_S.emplace(
        layer, masked_gram(feats_s.features.at(layer), ones_map(layer, feats_s.features.at(layer))));
  }
  return ctx;
}

double evaluate_objective(const Tensor& output, const LossContext& ctx,
                          const LossNetWeights& weights, Tensor* grad, LossBreakdown* breakdown,
                          bool with_tv) {
  auto image = grad ? ad::leaf(output, "output") : ad::constant(output, "output");
  auto feats = extract_feature_graph(image, weights, ctx.cfg.taps);
  LossBreakdown local;
  auto loss = region_loss_graph<float>(feats, ctx, with_tv ? image : nullptr, &local);
  double weighted_total = static_cast<double>(loss->value[0]);
  if (grad) {
    auto gmap = ad::backward(loss, {image}, /*release_memory=*/true);
    *grad = gmap.at(image);
  }
  if (breakdown) *breakdown = local;
  return weighted_total;
}

LossBreakdown total_loss(const Tensor& input, const Tensor& style, const Tensor& output,
                         const Tensor& input_mask, const Tensor& style_mask, const LossConfig& cfg,
                         const LossNetWeights& weights,
                         const std::vector<int>& attention_channels) {
  if (output.shape() != input.shape()) {
    throw std::invalid_argument("total_loss: output " + output.shape().str() +
                                " must match input " + input.shape().str());
  }
  LossContext ctx =
      build_loss_context(input, input_mask, style, style_mask, cfg, weights, attention_channels);
  LossBreakdown breakdown;
  evaluate_objective(output, ctx, weights, nullptr, &breakdown, /*with_tv=*/false);
  return breakdown;
}

double baseline_total_loss(const Tensor& input, const Tensor& style, const Tensor& output,
                           const LossConfig& cfg, const LossNetWeights& weights) {
  cfg.validate();
  const auto& spec = LossNetSpec::vgg16();
  const int C = cfg.mask_channels;
  FeatureBundle fo = extract_features(output, weights, cfg.taps);
  FeatureBundle fi = extract_features(input, weights, cfg.taps);
  FeatureBundle fs = extract_features(style, weights, cfg.taps);

  double total = 0.0;
  auto content_term = [&](const std::string& layer) {
    const Tensor& a = fo.features.at(layer);
    const Tensor& b = fi.features.at(layer);
    const Shape s = a.shape();
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      acc += d * d;
    }
    return static_cast<double>(C) / (2.0 * s.c * s.h * s.w) * acc;
  };
  total += cfg.alpha_for(cfg.taps.global_content) * cfg.lambda_g *
           content_term(cfg.taps.global_content);
  total +=
      cfg.alpha_for(cfg.taps.local_content) * cfg.lambda_l * content_term(cfg.taps.local_content);

  for (const auto& layer : cfg.taps.local_style) {
    const Tensor& a = fo.features.at(layer);
    const Tensor& b = fs.features.at(layer);
    const int n_l = spec.layer(layer).out_channels;
    const std::int64_t m_l = static_cast<std::int64_t>(a.shape().h) * a.shape().w;
    // Direct double-loop Gram gap, independent of the masked-Gram path.
    const std::int64_t M = m_l;
    double acc = 0.0;
    for (int r = 0; r < n_l; ++r) {
      for (int c2 = 0; c2 < n_l; ++c2) {
        double go = 0.0, gs = 0.0;
        const float* ar = a.data() + static_cast<std::int64_t>(r) * M;
        const float* ac = a.data() + static_cast<std::int64_t>(c2) * M;
        const float* br = b.data() + static_cast<std::int64_t>(r) * b.shape().h * b.shape().w;
        const float* bc = b.data() + static_cast<std::int64_t>(c2) * b.shape().h * b.shape().w;
        for (std::int64_t i = 0; i < M; ++i) go += static_cast<double>(ar[i]) * ac[i];
        const std::int64_t Ms = static_cast<std::int64_t>(b.shape().h) * b.shape().w;
        for (std::int64_t i = 0; i < Ms; ++i) gs += static_cast<double>(br[i]) * bc[i];
        const double d = go - gs;
        acc += d * d;
      }
    }
    const double denom = 4.0 * static_cast<double>(n_l) * n_l * static_cast<double>(m_l) * m_l;
    total += cfg.beta_for(layer) * cfg.lambda_l * static_cast<double>(C) / denom * acc;
  }
  return total;
}

StylizeResult stylize_by_optimization(const StylizeJob& job, const LossNetWeights& weights) {
  if (job.content.shape().n != 1 || job.content.shape().c != 3) {
    throw std::invalid_argument("stylize: content must be 1x3xHxW, got " +
                                job.content.shape().str());
  }
  LossContext ctx =
      job.baseline
          ? build_baseline_context(job.content, job.style, job.loss, weights)
          : build_loss_context(job.content, job.content_mask, job.style, job.style_mask, job.loss,
                               weights, job.attention_channels);

  Tensor x0 = Tensor::uniform(job.content.shape(), job.seed, 0.f, 255.f);

  StylizeResult result;
  LossBreakdown last_eval;
  Objective objective = [&](const Tensor& x, Tensor* grad) {
    return evaluate_objective(x, ctx, weights, grad, &last_eval, /*with_tv=*/true);
  };
  auto on_accept = [&](int, const Tensor&, double) { result.curve.push_back(last_eval); };

  LbfgsResult solved = lbfgs_projected(objective, std::move(x0), job.solver, on_accept);
  result.output = std::move(solved.x);
  result.trace = std::move(solved.trace);
  result.converged = solved.converged;
  return result;
}

}  // namespace purify
