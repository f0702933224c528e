#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "purify/autodiff.hpp"
#include "purify/tensor.hpp"
#include "purify/weights_io.hpp"

namespace purify {

enum class LayerKind { Conv, Pool };

struct LayerDef {
  std::string name;
  LayerKind kind;
  int in_channels = 0;
  int out_channels = 0;
};

/// Fixed 16-layer VGG topology through conv5_3. Weights are loaded, never
/// trained; the network never uses normalization.
class LossNetSpec {
 public:
  static const LossNetSpec& vgg16();

  const std::vector<LayerDef>& layers() const { return layers_; }
  bool has_layer(const std::string& name) const;
  const LayerDef& layer(const std::string& name) const;
  /// Number of pooling stages strictly before the named layer.
  int pools_before(const std::string& name) const;
  /// Spatial dims of the named layer's activation for an HxW input.
  std::pair<int, int> layer_dims(const std::string& name, int h, int w) const;

 private:
  std::vector<LayerDef> layers_;
};

/// Named layer taps feeding the losses.
struct TapSet {
  std::string local_content = "conv4_2";
  std::vector<std::string> local_style = {"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"};
  std::string global_content = "conv3_2";
  std::vector<std::string> global_style = {"conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"};

  std::vector<std::string> all_layers() const;
  std::vector<std::string> content_layers() const;
  std::vector<std::string> style_layers() const;
};

/// Per-layer activations F_l with channel count N_l and spatial size M_l.
template <typename T>
struct FeatureBundleT {
  std::map<std::string, TensorT<T>> features;

  int N(const std::string& layer) const { return features.at(layer).shape().c; }
  std::int64_t M(const std::string& layer) const {
    const Shape& s = features.at(layer).shape();
    return static_cast<std::int64_t>(s.h) * s.w;
  }
};

using FeatureBundle = FeatureBundleT<float>;

/// Loaded, validated loss-net weights (immutable, shareable).
class LossNetWeights {
 public:
  /// Validates a parsed container against the VGG topology; throws naming the
  /// first missing or mis-shaped layer.
  explicit LossNetWeights(WeightFile file);

  const std::array<float, 3>& means() const { return means_; }
  const Tensor& kernel(const std::string& layer) const { return kernels_.at(layer); }
  const Tensor& bias(const std::string& layer) const { return biases_.at(layer); }

 private:
  std::array<float, 3> means_;
  std::map<std::string, Tensor> kernels_;
  std::map<std::string, Tensor> biases_;  // stored as (1,C,1,1)
};

LossNetWeights load_weights(const std::string& path);
void save_weights(const std::string& path, const WeightFile& file);

/// Deterministic seeded random weight container (the repo's test fixture).
WeightFile make_random_weight_file(std::uint64_t seed);

/// Runs the image (1x3xHxW, pixels in [0,255], H,W >= 32) through the loss
/// net and returns activations at exactly the union of tap layers. The
/// returned Vars stay connected to `image` so losses can differentiate
/// through them.
std::map<std::string, ad::Var> extract_feature_graph(const ad::Var& image,
                                                     const LossNetWeights& weights,
                                                     const TapSet& taps);

/// Convenience value-only extraction (pure function of the inputs).
FeatureBundle extract_features(const Tensor& image, const LossNetWeights& weights,
                               const TapSet& taps);

/// Average-pools an input-resolution mask (entries in [0,1]) to the spatial
/// dims the named layer has for this mask's resolution. Adaptive bins, so
/// downsample(m) + downsample(1-m) = 1 survives at every scale.
Tensor downsample_mask(const Tensor& mask, const std::string& target_layer);

/// Same averaging to an explicit target size.
Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w);

}  // namespace purify
