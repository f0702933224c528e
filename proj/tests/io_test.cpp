#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "purify/config.hpp"
#include "purify/fixtures.hpp"
#include "purify/image_io.hpp"
#include "purify/pupil.hpp"

using namespace purify;

namespace {

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("integer images survive a PNG round trip losslessly") {
  const std::string path = temp_file("purify_io_rt.png");
  Tensor img(1, 3, 9, 13);
  std::mt19937_64 rng(130);
  std::uniform_int_distribution<int> dist(0, 255);
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(dist(rng));
  save_image(img, path);
  CHECK(load_image(path) == img);
  std::remove(path.c_str());
}

TEST_CASE("a solid red image keeps its exact channel values") {
  const std::string path = temp_file("purify_io_red.png");
  Tensor img(1, 3, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(0, 0, y, x) = 255.f;
  save_image(img, path);
  Tensor back = load_image(path);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(back.at(0, 0, y, x) == 255.f);
      CHECK(back.at(0, 1, y, x) == 0.f);
      CHECK(back.at(0, 2, y, x) == 0.f);
    }
  std::remove(path.c_str());
}

TEST_CASE("eye fixtures round-trip image and mask through PNG") {
  EyeFixture fx = make_eye_fixture(1);
  REQUIRE(fx.image.shape() == Shape{1, 3, 35, 55});
  REQUIRE(fx.mask.shape() == Shape{1, 3, 35, 55});
  const std::string img_path = temp_file("purify_io_eye.png");
  const std::string mask_path = temp_file("purify_io_eye_mask.png");
  save_image(fx.image, img_path);
  save_mask(fx.mask, mask_path);
  CHECK(load_image(img_path) == fx.image);
  CHECK(load_mask(mask_path, 3) == fx.mask);
  std::remove(img_path.c_str());
  std::remove(mask_path.c_str());
}

TEST_CASE("mask labels one-hot encode and out-of-range labels are named") {
  const std::string path = temp_file("purify_io_labels.png");
  Tensor five(1, 5, 3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) five.at(0, (y + x) % 5, y, x) = 1.f;
  save_mask(five, path);
  Tensor back = load_mask(path, 5);
  CHECK(back == five);
  // the same file has labels up to 4, so a 2-channel read must fail loudly
  CHECK_THROWS_AS(load_mask(path, 2), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("malformed and missing files raise descriptive errors") {
  const std::string path = temp_file("purify_io_bogus.png");
  std::ofstream(path) << "this is not a png";
  CHECK_THROWS_AS(load_image(path), std::runtime_error);
  CHECK_THROWS_AS(load_mask(path, 2), std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_image("/nonexistent/nowhere.png"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Pupil geometry

TEST_CASE("centroid of a single pixel is that pixel, exactly") {
  Tensor mask = Tensor::zeros({1, 1, 35, 55});
  mask.at(0, 0, 17, 27) = 1.f;
  PupilCenter c = pupil_center(mask);
  CHECK(c.x == 27.0);
  CHECK(c.y == 17.0);
}

TEST_CASE("centroid of a symmetric disc sits at its center") {
  Tensor mask = Tensor::zeros({1, 1, 35, 55});
  for (int y = 0; y < 35; ++y)
    for (int x = 0; x < 55; ++x) {
      const double d = std::hypot(x - 27.0, y - 17.0);
      if (d <= 5.0) mask.at(0, 0, y, x) = 1.f;
    }
  PupilCenter c = pupil_center(mask);
  CHECK(std::abs(c.x - 27.0) < 0.1);
  CHECK(std::abs(c.y - 17.0) < 0.1);
}

TEST_CASE("centroid is translation-equivariant") {
  Tensor a = Tensor::zeros({1, 1, 20, 30});
  Tensor b = Tensor::zeros({1, 1, 20, 30});
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<float> dist(0.f, 1.f);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const float v = dist(rng);
      a.at(0, 0, y + 2, x + 3) = v;
      b.at(0, 0, y + 9, x + 14) = v;
    }
  PupilCenter ca = pupil_center(a), cb = pupil_center(b);
  CHECK(cb.x - ca.x == doctest::Approx(11.0).epsilon(1e-9));
  CHECK(cb.y - ca.y == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("centroid errors on an empty channel and a bad channel index") {
  Tensor mask = Tensor::zeros({1, 2, 4, 4});
  CHECK_THROWS_AS(pupil_center(mask, 0), std::runtime_error);
  CHECK_THROWS_AS(pupil_center(mask, 5), std::invalid_argument);
}

TEST_CASE("ellipse refinement recovers a disc center and falls back gracefully") {
  Tensor mask = Tensor::zeros({1, 1, 40, 60});
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 60; ++x) {
      const double dx = (x - 31.0) / 9.0, dy = (y - 18.0) / 6.0;
      if (dx * dx + dy * dy <= 1.0) mask.at(0, 0, y, x) = 1.f;
    }
  PupilCenter c = pupil_center_ellipse(mask);
  CHECK(std::abs(c.x - 31.0) < 0.5);
  CHECK(std::abs(c.y - 18.0) < 0.5);

  // a 2x2 blob has too few boundary points for a conic: must equal the centroid
  Tensor tiny = Tensor::zeros({1, 1, 10, 10});
  tiny.at(0, 0, 4, 4) = tiny.at(0, 0, 4, 5) = tiny.at(0, 0, 5, 4) = tiny.at(0, 0, 5, 5) = 1.f;
  PupilCenter e = pupil_center_ellipse(tiny);
  PupilCenter g = pupil_center(tiny);
  CHECK(e.x == doctest::Approx(g.x));
  CHECK(e.y == doctest::Approx(g.y));
}

TEST_CASE("estimated pupil weight concentrates on the dark region") {
  EyeFixture fx = make_eye_fixture(2);
  Tensor weight = estimate_pupil_weight(fx.image);
  REQUIRE(weight.shape() == Shape{1, 1, 35, 55});
  PupilCenter truth = pupil_center(fx.mask, 0);
  PupilCenter est = pupil_center(weight, 0);
  CHECK(std::hypot(est.x - truth.x, est.y - truth.y) < 2.0);
}

TEST_CASE("shift report: exact zero, 3-4-5, and cohort statistics") {
  PupilShiftRow zero{"same", {10, 10}, {10, 10}};
  PupilShiftRow pyth{"pyth", {0, 0}, {3, 4}};
  PupilShiftReport identity = make_shift_report({zero});
  CHECK(identity.mean_shift == 0.0);
  CHECK(identity.std_shift == 0.0);

  PupilShiftReport both = make_shift_report({zero, pyth});
  CHECK(both.rows[1].shift == 5.0);
  CHECK(both.mean_shift == doctest::Approx(2.5));
  CHECK(both.std_shift == doctest::Approx(2.5));  // population std of {0, 5}
}

TEST_CASE("shift CSV has the pinned header and a summary block") {
  PupilShiftReport report = make_shift_report({{"eye_00", {1, 2}, {4, 6}}});
  std::ostringstream os;
  write_shift_csv(os, report);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "name,x_before,y_before,x_after,y_after,shift");
  std::getline(in, line);
  CHECK(line.starts_with("eye_00,1,2,4,6,5"));
  bool saw_mean = false, saw_std = false;
  while (std::getline(in, line)) {
    if (line.starts_with("mean,")) saw_mean = true;
    if (line.starts_with("std,")) saw_std = true;
  }
  CHECK(saw_mean);
  CHECK(saw_std);
}

// ---------------------------------------------------------------------------
// Job configuration

namespace {

const char* kFullConfig = R"({
  "paths": {
    "content": ["a.png", "b.png"],
    "content_mask": ["a_mask.png", "b_mask.png"],
    "style": "s.png",
    "style_mask": "s_mask.png",
    "loss_weights": "loss.rslw",
    "transfer_weights": "net.rstw",
    "output_dir": "out"
  },
  "loss": {
    "alpha": 50.0,
    "beta": 2000.0,
    "lambda_g": 1.0,
    "lambda_l": 0.5,
    "tv_weight": 1e-5,
    "mask_channels": 3,
    "taps": {"global_content": "conv3_2"},
    "beta_per_layer": {"conv1_1": 100.0}
  },
  "lbfgs": {"max_iters": 42, "box_lo": 0, "box_hi": 255},
  "adam": {"lr": 0.001, "epsilon": 1e-7, "batch_size": 2},
  "transfer": {"base_width": 16, "residual_blocks": 3, "dropout": 0.25},
  "seed": 9,
  "attention_channels": [0, 1],
  "checkpoint_every": 100
})";

}  // namespace

TEST_CASE("config parsing maps every documented key") {
  JobConfig cfg = parse_job_config(kFullConfig);
  CHECK(cfg.content == std::vector<std::string>{"a.png", "b.png"});
  CHECK(cfg.content_mask.size() == 2);
  CHECK(cfg.style == "s.png");
  CHECK(cfg.output_dir == "out");
  CHECK(cfg.loss.alpha == 50.0);
  CHECK(cfg.loss.beta == 2000.0);
  CHECK(cfg.loss.lambda_l == 0.5);
  CHECK(cfg.loss.theta == 1e-5);
  CHECK(cfg.loss.mask_channels == 3);
  CHECK(cfg.loss.taps.global_content == "conv3_2");
  CHECK(cfg.loss.beta_for("conv1_1") == 100.0);
  CHECK(cfg.loss.beta_for("conv2_1") == 2000.0);
  CHECK(cfg.lbfgs.max_iters == 42);
  CHECK(cfg.adam.eps == 1e-7);
  CHECK(cfg.adam.batch_size == 2);
  CHECK(cfg.transfer.base_width == 16);
  CHECK(cfg.transfer.residual_blocks == 3);
  CHECK(cfg.transfer.dropout_p == 0.25);
  CHECK(cfg.seed == 9);
  CHECK(cfg.attention_channels == std::vector<int>{0, 1});
  CHECK(cfg.checkpoint_every == 100);
}

TEST_CASE("a single content string is promoted to a one-element list") {
  JobConfig cfg = parse_job_config(R"({"paths": {"content": "only.png"}})");
  CHECK(cfg.content == std::vector<std::string>{"only.png"});
}

TEST_CASE("unknown keys are rejected at every nesting level") {
  CHECK_THROWS_WITH_AS(parse_job_config(R"({"sneaky": 1})"), doctest::Contains("sneaky"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_job_config(R"({"loss": {"gamma": 2}})"), doctest::Contains("gamma"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_job_config(R"({"lbfgs": {"momentum": 0.9}})"),
                       doctest::Contains("momentum"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_job_config(R"({"paths": {"styl": "typo.png"}})"),
                       doctest::Contains("styl"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_job_config(R"({"loss": {"taps": {"mid_style": []}}})"),
                       doctest::Contains("mid_style"), std::invalid_argument);
}

TEST_CASE("invalid JSON and invalid weights are rejected") {
  CHECK_THROWS_AS(parse_job_config("{not json"), std::invalid_argument);
  CHECK_THROWS_AS(parse_job_config("[1,2]"), std::invalid_argument);
  CHECK_THROWS_AS(parse_job_config(R"({"loss": {"alpha": -3}})"), std::invalid_argument);
}

TEST_CASE("serialize(parse(x)) is idempotent under re-parsing") {
  JobConfig cfg = parse_job_config(kFullConfig);
  const std::string once = serialize_job_config(cfg);
  const std::string twice = serialize_job_config(parse_job_config(once));
  CHECK(once == twice);
  CHECK(once != kFullConfig);  // normalization reorders and reformats
}

TEST_CASE("load_job_config reads from disk and errors on a missing path") {
  const std::string path = temp_file("purify_io_cfg.json");
  std::ofstream(path) << kFullConfig;
  JobConfig cfg = load_job_config(path);
  CHECK(cfg.seed == 9);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_job_config("/nonexistent/cfg.json"), std::runtime_error);
}
