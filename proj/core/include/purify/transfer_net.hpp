#pragma once

#include <random>
#include <string>
#include <vector>

#include "purify/autodiff.hpp"
#include "purify/optimize.hpp"
#include "purify/region_loss.hpp"
#include "purify/stylize.hpp"

namespace purify {

/// Architecture knobs; the stated kernel geometry (9x9 ends, 3x3 strided
/// downsampling, 4x4 padded transposed upsampling, four residual blocks) is
/// fixed, the filter widths and dropout probability are configurable.
struct TransferNetSpec {
  int base_width = 32;       // widths run base -> 2x -> 4x and mirror back up
  int residual_blocks = 4;
  double dropout_p = 0.5;
};

/// Feed-forward transformation network mapping I_RGB -> O_RGB in one pass.
/// Inputs are reflect-padded to a multiple of 4 internally and the output is
/// cropped back, so spatial dims are preserved; the scaled-tanh output layer
/// bounds pixels to [0,255] for arbitrary weights.
class TransferNet {
 public:
  TransferNet(TransferNetSpec spec, std::uint64_t seed);

  static TransferNet load(const std::string& path);
  void save(const std::string& path) const;

  const TransferNetSpec& spec() const { return spec_; }

  /// Evaluation-mode single pass (dropout disabled, frozen normalization).
  Tensor forward(const Tensor& input) const;

  /// Differentiable pass; training mode uses batch statistics and dropout.
  ad::Var forward_graph(ad::Var input, bool training, std::mt19937_64& rng) const;

  std::vector<ad::Var> parameters() const;

  /// Zeroes both convolutions (and normalization shifts) of every residual
  /// block, making each block the identity in eval mode with unit statistics.
  void zero_residual_blocks();

 private:
  struct ConvParams {
    ad::Var kernel;
    ad::Var bias;
  };
  struct NormParams {
    ad::Var gamma;
    ad::Var beta;
    mutable ad::BatchNormState state;
  };
  struct ResidualBlock {
    ConvParams conv1, conv2;
    NormParams bn1, bn2;
  };

  ConvParams make_conv(Shape shape, std::mt19937_64& rng, bool transposed = false);
  NormParams make_norm(int channels);

  TransferNetSpec spec_;
  ConvParams conv_in_, down1_, down2_, up1_, up2_, conv_out_;
  NormParams bn_in_, bn_down1_, bn_down2_, bn_up1_, bn_up2_;
  std::vector<ResidualBlock> blocks_;

  TransferNet() = default;
};

/// A training job: content RGB-mask pairs against one style pair.
struct TrainRun {
  std::vector<std::pair<Tensor, Tensor>> content;  // (image, mask)
  Tensor style, style_mask;
  LossConfig loss;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::vector<int> attention_channels = {0};
  int checkpoint_every = 0;           // 0 disables periodic checkpoints
  std::string checkpoint_path;
};

struct TrainResult {
  std::vector<LossBreakdown> curve;  // one entry per iteration (batch mean)
  bool diverged = false;
};

/// Adam training against the combined region objective. On divergence (NaN
/// loss) the step is not applied and training stops with the last valid
/// weights in place.
TrainResult train(TransferNet& net, const TrainRun& run, const LossNetWeights& loss_net);

}  // namespace purify
