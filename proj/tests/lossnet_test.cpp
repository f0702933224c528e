#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "purify/lossnet.hpp"

using namespace purify;

namespace {

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tap defaults match the documented layer sets") {
  TapSet taps;
  CHECK(taps.local_content == "conv4_2");
  CHECK(taps.global_content == "conv3_2");
  CHECK(taps.local_style ==
        std::vector<std::string>{"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"});
  CHECK(taps.global_style ==
        std::vector<std::string>{"conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"});
  const auto& spec = LossNetSpec::vgg16();
  for (const auto& name : taps.all_layers()) CHECK(spec.has_layer(name));
}

TEST_CASE("topology arithmetic: conv4_2 of a 32x32 input is 4x4") {
  const auto& spec = LossNetSpec::vgg16();
  CHECK(spec.layer_dims("conv4_2", 32, 32) == std::pair<int, int>{4, 4});
  CHECK(spec.layer_dims("conv1_1", 32, 32) == std::pair<int, int>{32, 32});
  CHECK(spec.layer_dims("conv5_3", 32, 32) == std::pair<int, int>{2, 2});
  CHECK(spec.layer("conv4_2").out_channels == 512);
  CHECK_THROWS_AS(spec.layer("conv9_9"), std::invalid_argument);
}

TEST_CASE("weight container round-trips bit-identically") {
  const std::string path = temp_file("purify_lossnet_rt.rslw");
  WeightFile file = make_random_weight_file(21);
  save_weights(path, file);
  WeightFile back = load_weight_file(path, "RSLW");
  REQUIRE(back.records.size() == file.records.size());
  for (size_t i = 0; i < file.records.size(); ++i) {
    CHECK(back.records[i].name == file.records[i].name);
    CHECK(back.records[i].kernel == file.records[i].kernel);
    CHECK(back.records[i].bias == file.records[i].bias);
  }
  CHECK(back.means == file.means);

  // Reloading twice yields bit-identical feature bundles.
  LossNetWeights w1(load_weight_file(path, "RSLW"));
  LossNetWeights w2(load_weight_file(path, "RSLW"));
  Tensor img = Tensor::uniform({1, 3, 32, 32}, 22, 0.f, 255.f);
  TapSet taps;
  FeatureBundle f1 = extract_features(img, w1, taps);
  FeatureBundle f2 = extract_features(img, w2, taps);
  for (const auto& [name, t] : f1.features) CHECK(t == f2.features.at(name));
  std::remove(path.c_str());
}

TEST_CASE("missing layer is rejected by name") {
  WeightFile file = make_random_weight_file(23);
  std::erase_if(file.records, [](const WeightRecord& r) { return r.name == "conv5_3"; });
  CHECK_THROWS_WITH_AS(LossNetWeights(std::move(file)), doctest::Contains("conv5_3"),
                       std::runtime_error);
}

TEST_CASE("mis-shaped layer is rejected by name") {
  WeightFile file = make_random_weight_file(24);
  for (auto& rec : file.records) {
    if (rec.name == "conv2_1") rec.shape = Shape{128, 64, 5, 5};
  }
  CHECK_THROWS_WITH_AS(LossNetWeights(std::move(file)), doctest::Contains("conv2_1"),
                       std::runtime_error);
}

TEST_CASE("corrupt checksum is rejected") {
  const std::string path = temp_file("purify_lossnet_crc.rslw");
  save_weights(path, make_random_weight_file(25));
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    char byte = 0x5A;
    f.write(&byte, 1);
  }
  CHECK_THROWS_WITH_AS(load_weight_file(path, "RSLW"), doctest::Contains("CRC32"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("wrong magic is rejected") {
  const std::string path = temp_file("purify_lossnet_magic.rslw");
  WeightFile file = make_random_weight_file(26);
  file.magic = "XXXX";
  save_weight_file(path, file);
  CHECK_THROWS_AS(load_weight_file(path, "RSLW"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("all-zero kernels give all-zero post-ReLU activations") {
  WeightFile file = make_random_weight_file(27);
  for (auto& rec : file.records) std::fill(rec.kernel.begin(), rec.kernel.end(), 0.f);
  LossNetWeights weights(std::move(file));
  Tensor img = Tensor::uniform({1, 3, 32, 32}, 28, 0.f, 255.f);
  FeatureBundle bundle = extract_features(img, weights, TapSet{});
  for (const auto& [name, t] : bundle.features) {
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.f);
  }
}

TEST_CASE("extract_features is pure and shape-checked") {
  LossNetWeights weights(make_random_weight_file(29));
  Tensor img = Tensor::uniform({1, 3, 34, 40}, 30, 0.f, 255.f);
  TapSet taps;
  FeatureBundle a = extract_features(img, weights, taps);
  FeatureBundle b = extract_features(img, weights, taps);
  for (const auto& [name, t] : a.features) CHECK(t == b.features.at(name));

  // bundle contains exactly the union of the tap layers
  const auto wanted = taps.all_layers();
  CHECK(a.features.size() == wanted.size());
  for (const auto& name : wanted) CHECK(a.features.count(name) == 1);
  CHECK(a.N("conv4_2") == 512);

  CHECK_THROWS_AS(extract_features(Tensor::zeros({1, 3, 31, 64}), weights, taps),
                  std::invalid_argument);
  CHECK_THROWS_AS(extract_features(Tensor::zeros({1, 1, 64, 64}), weights, taps),
                  std::invalid_argument);
}

TEST_CASE("spatial sizes are monotonically non-increasing with depth") {
  LossNetWeights weights(make_random_weight_file(31));
  FeatureBundle bundle = extract_features(Tensor::zeros({1, 3, 40, 56}), weights, TapSet{});
  const auto& spec = LossNetSpec::vgg16();
  int prev_h = 1 << 20, prev_pools = -1;
  for (const auto& layer : spec.layers()) {
    if (!bundle.features.count(layer.name)) continue;
    const int pools = spec.pools_before(layer.name);
    const int h = bundle.features.at(layer.name).shape().h;
    if (pools >= prev_pools) CHECK(h <= prev_h);
    prev_h = h;
    prev_pools = pools;
  }
}

TEST_CASE("downsample_mask: constants survive, checkerboard averages to 0.5") {
  Tensor ones = Tensor::ones({1, 1, 8, 8});
  Tensor pooled = downsample_mask(ones, "conv2_1");
  for (std::int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled[i] == 1.f);

  Tensor zeros = Tensor::zeros({1, 1, 8, 8});
  pooled = downsample_mask(zeros, "conv2_1");
  for (std::int64_t i = 0; i < pooled.numel(); ++i) CHECK(pooled[i] == 0.f);

  Tensor checker(1, 1, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) checker.at(0, 0, y, x) = static_cast<float>((x + y) % 2);
  Tensor half = adaptive_avg_pool(checker, 4, 4);
  for (std::int64_t i = 0; i < half.numel(); ++i) CHECK(half[i] == 0.5f);

  CHECK_THROWS_AS(downsample_mask(ones, "conv0_0"), std::invalid_argument);
}

TEST_CASE("downsampling preserves the sum-to-one partition at every tap") {
  Tensor m = Tensor::uniform({1, 1, 35, 55}, 32, 0.f, 1.f);
  Tensor inv(m.shape());
  for (std::int64_t i = 0; i < m.numel(); ++i) inv[i] = 1.f - m[i];
  for (const auto& layer : TapSet{}.all_layers()) {
    Tensor a = downsample_mask(m, layer);
    Tensor b = downsample_mask(inv, layer);
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      CHECK(a[i] + b[i] == doctest::Approx(1.f).epsilon(1e-6));
    }
  }
}
