#include <doctest.h>

#include "helpers.hpp"
#include "purify/attention.hpp"

using namespace purify;

TEST_CASE("from_positive enforces exact pointwise sum-to-one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AttentionPair pair = AttentionPair::from_positive(Tensor::uniform({1, 1, 7, 9}, seed));
    for (std::int64_t i = 0; i < pair.pos.numel(); ++i) {
      CHECK(pair.pos[i] + pair.neg[i] == 1.0f);  // exact in float
    }
  }
}

TEST_CASE("zero logits split attention evenly") {
  auto f_full = ad::constant(Tensor::uniform({1, 4, 5, 5}, 3));
  auto f_mask = ad::constant(Tensor::uniform({1, 2, 5, 5}, 4));
  AttentionSubnetParams params{ad::constant(Tensor::zeros({1, 6, 1, 1})),
                               ad::constant(Tensor::zeros({1, 1, 1, 1}))};
  auto pair = attention_maps(f_full, f_mask, params);
  CHECK(pair.pos->value.shape() == Shape{1, 1, 5, 5});
  for (std::int64_t i = 0; i < pair.pos->value.numel(); ++i) {
    CHECK(pair.pos->value[i] == doctest::Approx(0.5f));
    CHECK(pair.pos->value[i] + pair.neg->value[i] == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("a saturated subnet recovers a binary mask") {
  // f_full contributes nothing; a huge weight on the binary mask channel
  // pushes the sigmoid to its asymptotes.
  Tensor mask(1, 1, 6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) mask.at(0, 0, y, x) = (x < 3) ? 1.f : 0.f;
  Tensor w = Tensor::zeros({1, 4, 1, 1});
  w.at(0, 3, 0, 0) = 60.f;  // mask channel
  Tensor b = Tensor::full({1, 1, 1, 1}, -30.f);
  AttentionSubnetParams params{ad::constant(w), ad::constant(b)};
  auto pair = attention_maps(ad::constant(Tensor::uniform({1, 3, 6, 6}, 5)),
                             ad::constant(mask), params);
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    CHECK(std::abs(pair.pos->value[i] - mask[i]) < 0.01f);
  }
}

TEST_CASE("attention_maps rejects spatially mismatched inputs") {
  AttentionSubnetParams params{ad::constant(Tensor::zeros({1, 4, 1, 1})),
                               ad::constant(Tensor::zeros({1, 1, 1, 1}))};
  CHECK_THROWS_AS(attention_maps(ad::constant(Tensor::zeros({1, 3, 6, 6})),
                                 ad::constant(Tensor::zeros({1, 1, 5, 6})), params),
                  std::invalid_argument);
}

TEST_CASE("mask_to_attention pools the selected channels") {
  // Binary two-channel mask at full resolution; channel 0 is the region.
  Tensor mask(1, 2, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const float in_region = (y < 4) ? 1.f : 0.f;
      mask.at(0, 0, y, x) = in_region;
      mask.at(0, 1, y, x) = 1.f - in_region;
    }
  AttentionPair pair = mask_to_attention(mask, "conv2_1");
  REQUIRE(pair.pos.shape() == Shape{1, 1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(pair.pos.at(0, 0, y, x) == ((y < 2) ? 1.f : 0.f));
      CHECK(pair.pos.at(0, 0, y, x) + pair.neg.at(0, 0, y, x) == 1.f);
    }

  // Selecting both complementary channels yields att+ identically 1.
  AttentionPair both = mask_to_attention(mask, "conv2_1", {0, 1});
  for (std::int64_t i = 0; i < both.pos.numel(); ++i) CHECK(both.pos[i] == 1.f);

  CHECK_THROWS_AS(mask_to_attention(mask, "conv1_1", {2}), std::invalid_argument);
}

TEST_CASE("build_streams: identity, vanishing, and additivity") {
  FeatureBundle full;
  full.features.emplace("a1", Tensor::uniform({1, 4, 6, 6}, 7, -2.f, 2.f));
  full.features.emplace("a2", Tensor::uniform({1, 6, 3, 3}, 8, -2.f, 2.f));

  std::map<std::string, AttentionPair> ones_pairs, rand_pairs;
  ones_pairs.emplace("a1", AttentionPair::from_positive(Tensor::ones({1, 1, 6, 6})));
  ones_pairs.emplace("a2", AttentionPair::from_positive(Tensor::ones({1, 1, 3, 3})));
  rand_pairs.emplace("a1", AttentionPair::from_positive(Tensor::uniform({1, 1, 6, 6}, 9)));
  rand_pairs.emplace("a2", AttentionPair::from_positive(Tensor::uniform({1, 1, 3, 3}, 10)));

  RegionStreams id = build_streams(full, ones_pairs);
  for (const auto& [layer, feat] : full.features) {
    CHECK(id.attention.features.at(layer) == feat);
    for (std::int64_t i = 0; i < feat.numel(); ++i) {
      CHECK(id.background.features.at(layer)[i] == 0.f);
    }
  }

  RegionStreams mixed = build_streams(full, rand_pairs);
  for (const auto& [layer, feat] : full.features) {
    const Tensor& att = mixed.attention.features.at(layer);
    const Tensor& bkgd = mixed.background.features.at(layer);
    for (std::int64_t i = 0; i < feat.numel(); ++i) {
      CHECK(att[i] + bkgd[i] == doctest::Approx(feat[i]).epsilon(1e-6));
    }
  }

  rand_pairs.erase("a2");
  CHECK_THROWS_WITH_AS(build_streams(full, rand_pairs), doctest::Contains("a2"),
                       std::invalid_argument);
}

TEST_CASE("build_streams rejects mismatched attention resolution") {
  FeatureBundle full;
  full.features.emplace("a1", Tensor::zeros({1, 4, 6, 6}));
  std::map<std::string, AttentionPair> pairs;
  pairs.emplace("a1", AttentionPair::from_positive(Tensor::ones({1, 1, 3, 3})));
  CHECK_THROWS_AS(build_streams(full, pairs), std::invalid_argument);
}
