#pragma once

#include <cstdint>
#include <vector>

#include "purify/lossnet.hpp"
#include "purify/optimize.hpp"
#include "purify/region_loss.hpp"

namespace purify {

/// Checks the RGB-mask pair contract: image 1x3xHxW in [0,255], mask
/// 1xCxHxW with entries in [0,1] summing to 1 across channels at every pixel.
void validate_rgb_mask_pair(const Tensor& image, const Tensor& mask);

/// Precomputes the context for the combined objective from the input and
/// style RGB-mask pairs.
LossContext build_loss_context(const Tensor& input, const Tensor& input_mask, const Tensor& style,
                               const Tensor& style_mask, const LossConfig& cfg,
                               const LossNetWeights& weights,
                               const std::vector<int>& attention_channels = {0});

/// Comparison-mode context: region maps identically one for content/local
/// style, i.e. the classic unmasked whole-image objective over the same taps.
LossContext build_baseline_context(const Tensor& input, const Tensor& style, const LossConfig& cfg,
                                   const LossNetWeights& weights);

/// Full pipeline evaluation of the combined objective (without TV, which is
/// added only by the solver objective).
LossBreakdown total_loss(const Tensor& input, const Tensor& style, const Tensor& output,
                         const Tensor& input_mask, const Tensor& style_mask, const LossConfig& cfg,
                         const LossNetWeights& weights,
                         const std::vector<int>& attention_channels = {0});

/// Independent unmasked baseline: content at both content taps, Gram style at
/// the local style taps, direct loops with no attention machinery.
double baseline_total_loss(const Tensor& input, const Tensor& style, const Tensor& output,
                           const LossConfig& cfg, const LossNetWeights& weights);

struct StylizeJob {
  Tensor content, content_mask;
  Tensor style, style_mask;
  LossConfig loss;
  LbfgsConfig solver;
  std::uint64_t seed = 0;
  std::vector<int> attention_channels = {0};
  bool baseline = false;  // comparison mode (unmasked objective)
};

struct StylizeResult {
  Tensor output;
  std::vector<LossBreakdown> curve;     // one entry per accepted iterate
  std::vector<IterationRecord> trace;
  bool converged = false;
};

/// Solves O = argmin L_total + theta * TV, from seeded white noise, with
/// projected L-BFGS keeping every iterate in [0,255].
StylizeResult stylize_by_optimization(const StylizeJob& job, const LossNetWeights& weights);

/// One objective + gradient evaluation against a prebuilt context (also used
/// by training and the benchmark harness).
double evaluate_objective(const Tensor& output, const LossContext& ctx,
                          const LossNetWeights& weights, Tensor* grad,
                          LossBreakdown* breakdown = nullptr, bool with_tv = true);

}  // namespace purify
