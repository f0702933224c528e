#pragma once

#include <cstdint>

#include "purify/tensor.hpp"

namespace purify {

/// Synthetic test inputs. All images are integer-valued in [0,255] so PNG
/// round-trips are lossless.

/// Eye patch plus 3-channel segmentation (0 = pupil, 1 = iris, 2 = skin).
struct EyeFixture {
  Tensor image;
  Tensor mask;
};

/// Noisy "real" eye: textured skin, off-center iris/pupil, per-seed jitter.
EyeFixture make_eye_fixture(std::uint64_t seed, int width = 55, int height = 35);

/// Clean "synthetic-style" eye: flat colors, centered, no noise.
EyeFixture make_style_eye(int width = 55, int height = 35);

/// Generic content/style pair with 2-channel masks (0 = attention disc,
/// 1 = background) for solver-scale tests.
struct DeskFixture {
  Tensor content, content_mask;
  Tensor style, style_mask;
};

DeskFixture make_desk_fixture(int size, std::uint64_t seed);

}  // namespace purify
