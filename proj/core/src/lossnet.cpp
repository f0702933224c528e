#include "purify/lossnet.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace purify {

const LossNetSpec& LossNetSpec::vgg16() {
  static const LossNetSpec spec = [] {
    LossNetSpec s;
    auto conv = [&s](const char* name, int in, int out) {
      s.layers_.push_back({name, LayerKind::Conv, in, out});
    };
    auto pool = [&s](const char* name, int ch) {
      s.layers_.push_back({name, LayerKind::Pool, ch, ch});
    };
    conv("conv1_1", 3, 64);
    conv("conv1_2", 64, 64);
    pool("pool1", 64);
    conv("conv2_1", 64, 128);
    conv("conv2_2", 128, 128);
    pool("pool2", 128);
    conv("conv3_1", 128, 256);
    conv("conv3_2", 256, 256);
    conv("conv3_3", 256, 256);
    pool("pool3", 256);
    conv("conv4_1", 256, 512);
    conv("conv4_2", 512, 512);
    conv("conv4_3", 512, 512);
    pool("pool4", 512);
    conv("conv5_1", 512, 512);
    conv("conv5_2", 512, 512);
    conv("conv5_3", 512, 512);
    return s;
  }();
  return spec;
}

bool LossNetSpec::has_layer(const std::string& name) const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [&](const LayerDef& l) { return l.name == name; });
}

const LayerDef& LossNetSpec::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw std::invalid_argument("unknown loss-net layer \"" + name + "\"");
}

int LossNetSpec::pools_before(const std::string& name) const {
  int pools = 0;
  for (const auto& l : layers_) {
    if (l.name == name) return pools;
    if (l.kind == LayerKind::Pool) ++pools;
  }
  throw std::invalid_argument("unknown loss-net layer \"" + name + "\"");
}

std::pair<int, int> LossNetSpec::layer_dims(const std::string& name, int h, int w) const {
  int pools = pools_before(name);
  if (layer(name).kind == LayerKind::Pool) ++pools;
  for (int i = 0; i < pools; ++i) {
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
  }
  return {h, w};
}

std::vector<std::string> TapSet::all_layers() const {
  std::set<std::string> s(local_style.begin(), local_style.end());
  s.insert(global_style.begin(), global_style.end());
  s.insert(local_content);
  s.insert(global_content);
  return {s.begin(), s.end()};
}

std::vector<std::string> TapSet::content_layers() const {
  if (local_content == global_content) return {global_content};
  return {global_content, local_content};
}

std::vector<std::string> TapSet::style_layers() const {
  std::set<std::string> s(local_style.begin(), local_style.end());
  s.insert(global_style.begin(), global_style.end());
  return {s.begin(), s.end()};
}

LossNetWeights::LossNetWeights(WeightFile file) : means_(file.means) {
  const auto& spec = LossNetSpec::vgg16();
  for (const auto& l : spec.layers()) {
    if (l.kind != LayerKind::Conv) continue;
    const WeightRecord* rec = file.find(l.name);
    if (!rec) throw std::runtime_error("weight file is missing layer \"" + l.name + "\"");
    const Shape expect{l.out_channels, l.in_channels, 3, 3};
    if (rec->shape != expect) {
      throw std::runtime_error("layer \"" + l.name + "\": expected kernel shape " + expect.str() +
                               ", file has " + rec->shape.str());
    }
    Tensor k(expect);
    std::copy(rec->kernel.begin(), rec->kernel.end(), k.data());
    Tensor b(1, l.out_channels, 1, 1);
    std::copy(rec->bias.begin(), rec->bias.end(), b.data());
    kernels_.emplace(l.name, std::move(k));
    biases_.emplace(l.name, std::move(b));
  }
}

LossNetWeights load_weights(const std::string& path) {
  return LossNetWeights(load_weight_file(path, "RSLW"));
}

void save_weights(const std::string& path, const WeightFile& file) {
  save_weight_file(path, file);
}

WeightFile make_random_weight_file(std::uint64_t seed) {
  WeightFile file;
  file.magic = "RSLW";
  file.means = {0.485f, 0.456f, 0.406f};
  const auto& spec = LossNetSpec::vgg16();
  int index = 0;
  for (const auto& l : spec.layers()) {
    if (l.kind != LayerKind::Conv) continue;
    WeightRecord rec;
    rec.name = l.name;
    rec.shape = Shape{l.out_channels, l.in_channels, 3, 3};
    const double fan_in = static_cast<double>(l.in_channels) * 9.0;
    Tensor k = Tensor::gaussian(rec.shape, seed * 1000003u + static_cast<std::uint64_t>(index), 0.0,
                                std::sqrt(2.0 / fan_in));
    rec.kernel.assign(k.data(), k.data() + k.numel());
    rec.bias.assign(static_cast<size_t>(l.out_channels), 0.f);
    file.records.push_back(std::move(rec));
    ++index;
  }
  return file;
}

std::map<std::string, ad::Var> extract_feature_graph(const ad::Var& image,
                                                     const LossNetWeights& weights,
                                                     const TapSet& taps) {
  const Shape s = image->value.shape();
  if (s.n != 1 || s.c != 3) {
    throw std::invalid_argument("extract_features: image must be 1x3xHxW, got " + s.str());
  }
  if (s.h < 32 || s.w < 32) {
    throw std::invalid_argument("extract_features: image " + s.str() +
                                " too small for five pool stages (need H,W >= 32)");
  }
  const auto& spec = LossNetSpec::vgg16();
  std::set<std::string> wanted;
  for (const auto& t : taps.all_layers()) {
    if (!spec.has_layer(t)) throw std::invalid_argument("tap names unknown layer \"" + t + "\"");
    wanted.insert(t);
  }

  std::map<std::string, ad::Var> out;
  ad::Var x = ad::normalize_image(image, weights.means());
  for (const auto& l : spec.layers()) {
    if (l.kind == LayerKind::Conv) {
      x = ad::conv2d(x, ad::constant(weights.kernel(l.name), l.name + ".k"),
                     ad::constant(weights.bias(l.name), l.name + ".b"), 1, 1,
                     /*fuse_relu=*/true);
    } else {
      x = ad::max_pool2d(x, 2, 2);
    }
    if (wanted.count(l.name)) {
      out.emplace(l.name, x);
      wanted.erase(l.name);
      if (wanted.empty()) break;
    }
  }
  return out;
}

FeatureBundle extract_features(const Tensor& image, const LossNetWeights& weights,
                               const TapSet& taps) {
  auto graph = extract_feature_graph(ad::constant(image, "image"), weights, taps);
  FeatureBundle bundle;
  for (auto& [name, var] : graph) bundle.features.emplace(name, std::move(var->value));
  return bundle;
}

Tensor adaptive_avg_pool(const Tensor& input, int out_h, int out_w) {
  const Shape s = input.shape();
  if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w) {
    throw std::invalid_argument("adaptive_avg_pool: bad target " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " for " + s.str());
  }
  Tensor out(s.n, s.c, out_h, out_w);
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int oy = 0; oy < out_h; ++oy) {
        const int y0 = (oy * s.h) / out_h;
        const int y1 = ((oy + 1) * s.h + out_h - 1) / out_h;
        for (int ox = 0; ox < out_w; ++ox) {
          const int x0 = (ox * s.w) / out_w;
          const int x1 = ((ox + 1) * s.w + out_w - 1) / out_w;
          double acc = 0.0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) acc += static_cast<double>(input.at(b, c, y, x));
          out.at(b, c, oy, ox) = static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
        }
      }
  return out;
}

Tensor downsample_mask(const Tensor& mask, const std::string& target_layer) {
  const auto& spec = LossNetSpec::vgg16();
  if (!spec.has_layer(target_layer)) {
    throw std::invalid_argument("downsample_mask: unknown layer \"" + target_layer + "\"");
  }
  const Shape s = mask.shape();
  const auto [th, tw] = spec.layer_dims(target_layer, s.h, s.w);
  return adaptive_avg_pool(mask, th, tw);
}

}  // namespace purify
