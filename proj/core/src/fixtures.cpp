#include "purify/fixtures.hpp"

#include <cmath>
#include <random>

namespace purify {
namespace {

float quantize(double v) { return std::round(std::min(255.0, std::max(0.0, v))); }

void put_rgb(Tensor& img, int y, int x, double r, double g, double b) {
  img.at(0, 0, y, x) = quantize(r);
  img.at(0, 1, y, x) = quantize(g);
  img.at(0, 2, y, x) = quantize(b);
}

}  // namespace

EyeFixture make_eye_fixture(std::uint64_t seed, int width, int height) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  const double cx = width / 2.0 + (u(rng) - 0.5) * 10.0;
  const double cy = height / 2.0 + (u(rng) - 0.5) * 5.0;
  const double pupil_r = 3.5 + u(rng) * 1.5;
  const double iris_r = 8.5 + u(rng) * 2.0;
  const double stripe_phase = u(rng) * 6.28318;
  const double skin_r = 195.0 + u(rng) * 20.0;
  const double skin_g = 155.0 + u(rng) * 20.0;
  const double skin_b = 130.0 + u(rng) * 20.0;

  EyeFixture fx;
  fx.image = Tensor(1, 3, height, width);
  fx.mask = Tensor::zeros({1, 3, height, width});
  std::normal_distribution<double> noise(0.0, 6.0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      int label;
      if (d < pupil_r) {
        label = 0;
        const double v = 18.0 + 4.0 * u(rng);
        put_rgb(fx.image, y, x, v, v, v + 4.0);
      } else if (d < iris_r) {
        label = 1;
        const double stripes = 18.0 * std::sin(8.0 * std::atan2(dy, dx) + stripe_phase);
        put_rgb(fx.image, y, x, 75.0 + stripes + noise(rng), 105.0 + stripes + noise(rng),
                135.0 + stripes + noise(rng));
      } else {
        label = 2;
        const double shade = 12.0 * std::sin(0.25 * x) + 0.3 * y;
        put_rgb(fx.image, y, x, skin_r + shade + noise(rng), skin_g + shade + noise(rng),
                skin_b + shade + noise(rng));
      }
      fx.mask.at(0, label, y, x) = 1.f;
    }
  }
  return fx;
}

EyeFixture make_style_eye(int width, int height) {
  const double cx = width / 2.0, cy = height / 2.0;
  const double pupil_r = 4.0, iris_r = 9.5;
  EyeFixture fx;
  fx.image = Tensor(1, 3, height, width);
  fx.mask = Tensor::zeros({1, 3, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double d = std::sqrt(dx * dx + dy * dy);
      int label;
      if (d < pupil_r) {
        label = 0;
        put_rgb(fx.image, y, x, 12.0, 12.0, 16.0);
      } else if (d < iris_r) {
        label = 1;
        // Single smooth radial ramp: the "rendered" look, no texture.
        const double t = (d - pupil_r) / (iris_r - pupil_r);
        put_rgb(fx.image, y, x, 55.0 + 25.0 * t, 125.0 - 20.0 * t, 95.0 + 15.0 * t);
      } else {
        label = 2;
        put_rgb(fx.image, y, x, 228.0, 198.0, 178.0);
      }
      fx.mask.at(0, label, y, x) = 1.f;
    }
  }
  return fx;
}

DeskFixture make_desk_fixture(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 5.0);
  const double cx = size * 0.5, cy = size * 0.45, r = size * 0.22;

  DeskFixture fx;
  fx.content = Tensor(1, 3, size, size);
  fx.content_mask = Tensor::zeros({1, 2, size, size});
  fx.style = Tensor(1, 3, size, size);
  fx.style_mask = Tensor::zeros({1, 2, size, size});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x - cx, dy = y - cy;
      const bool in_disc = dx * dx + dy * dy < r * r;
      if (in_disc) {
        put_rgb(fx.content, y, x, 40.0 + noise(rng), 60.0 + noise(rng), 120.0 + noise(rng));
      } else {
        const double ramp = 150.0 + 80.0 * (x + y) / (2.0 * size);
        put_rgb(fx.content, y, x, ramp + noise(rng), ramp * 0.8 + noise(rng),
                ramp * 0.6 + noise(rng));
      }
      fx.content_mask.at(0, in_disc ? 0 : 1, y, x) = 1.f;

      const bool in_disc_s = dx * dx + dy * dy < r * r;
      if (in_disc_s) {
        put_rgb(fx.style, y, x, 30.0, 90.0, 70.0);
      } else {
        const double stripes = 128.0 + 100.0 * std::sin(0.5 * x) * std::sin(0.5 * y);
        put_rgb(fx.style, y, x, stripes, 255.0 - stripes, 180.0);
      }
      fx.style_mask.at(0, in_disc_s ? 0 : 1, y, x) = 1.f;
    }
  }
  return fx;
}

}  // namespace purify
