// Command-line front end: optimization- and feed-forward stylization, transfer
// net training, the baseline comparison protocol, the speed table, and the
// pupil-preservation check. All outputs land under the job's output directory.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "purify/config.hpp"
#include "purify/fixtures.hpp"
#include "purify/image_io.hpp"
#include "purify/lossnet.hpp"
#include "purify/pupil.hpp"
#include "purify/stylize.hpp"
#include "purify/transfer_net.hpp"

namespace fs = std::filesystem;
using namespace purify;

namespace {

JobConfig load_config(const std::string& path, const std::string& output_dir_override) {
  JobConfig cfg = load_job_config(path);
  if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
  if (cfg.output_dir.empty()) throw std::runtime_error("config: paths.output_dir is required");
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::string out_path(const JobConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

LossNetWeights require_loss_net(const JobConfig& cfg) {
  if (cfg.loss_weights.empty()) {
    throw std::runtime_error("config: paths.loss_weights is required for this command");
  }
  return load_weights(cfg.loss_weights);
}

void write_curve_csv(const std::string& path, const std::vector<LossBreakdown>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_curve_header(os);
  for (size_t i = 0; i < curve.size(); ++i) write_curve_row(os, static_cast<int>(i), curve[i]);
}

StylizeJob make_job(const JobConfig& cfg, size_t content_index, bool baseline) {
  if (cfg.content.size() <= content_index) {
    throw std::runtime_error("config: paths.content entry " + std::to_string(content_index) +
                             " is missing");
  }
  StylizeJob job;
  job.content = load_image(cfg.content[content_index]);
  job.style = load_image(cfg.style);
  job.loss = cfg.loss;
  job.solver = cfg.lbfgs;
  job.seed = cfg.seed + content_index;
  job.attention_channels = cfg.attention_channels;
  job.baseline = baseline;
  return job;
}

// Masks are authored with varying label counts; probe upward until the
// smallest channel count that covers every label loads cleanly.
Tensor load_mask_flexible(const std::string& path, int min_channels) {
  for (int c = min_channels; c <= 16; ++c) {
    try {
      return load_mask(path, c);
    } catch (const std::runtime_error&) {
      if (c == 16) throw;
    }
  }
  throw std::runtime_error("unreachable");
}

int cmd_stylize_opt(const std::string& config_path, const std::string& output_dir, bool baseline) {
  JobConfig cfg = load_config(config_path, output_dir);
  LossNetWeights weights = require_loss_net(cfg);

  StylizeJob job;
  job.content = load_image(cfg.content.at(0));
  job.style = load_image(cfg.style);
  job.loss = cfg.loss;
  job.solver = cfg.lbfgs;
  job.seed = cfg.seed;
  job.attention_channels = cfg.attention_channels;
  job.baseline = baseline;
  if (!baseline) {
    job.content_mask = load_mask_flexible(cfg.content_mask.at(0), 2);
    job.style_mask = load_mask_flexible(cfg.style_mask, 2);
  }
  StylizeResult result = stylize_by_optimization(job, weights);
  save_image(result.output, out_path(cfg, "output.png"));
  write_curve_csv(out_path(cfg, "curve.csv"), result.curve);
  std::cout << "wrote " << out_path(cfg, "output.png") << " ("
            << result.trace.size() - 1 << " iterations, final loss "
            << result.trace.back().loss << ")\n";
  return 0;
}

int cmd_stylize_ff(const std::string& config_path, const std::string& output_dir) {
  JobConfig cfg = load_config(config_path, output_dir);
  if (cfg.transfer_weights.empty()) {
    throw std::runtime_error("config: paths.transfer_weights is required for stylize-ff");
  }
  TransferNet net = TransferNet::load(cfg.transfer_weights);
  Tensor output = net.forward(load_image(cfg.content.at(0)));
  save_image(output, out_path(cfg, "output.png"));
  std::cout << "wrote " << out_path(cfg, "output.png") << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& output_dir) {
  JobConfig cfg = load_config(config_path, output_dir);
  LossNetWeights weights = require_loss_net(cfg);
  if (cfg.content.size() != cfg.content_mask.size() || cfg.content.empty()) {
    throw std::runtime_error("config: train needs matching non-empty content and content_mask lists");
  }

  TrainRun run;
  for (size_t i = 0; i < cfg.content.size(); ++i) {
    run.content.emplace_back(load_image(cfg.content[i]),
                             load_mask_flexible(cfg.content_mask[i], 2));
  }
  run.style = load_image(cfg.style);
  run.style_mask = load_mask_flexible(cfg.style_mask, 2);
  run.loss = cfg.loss;
  run.adam = cfg.adam;
  run.seed = cfg.seed;
  run.attention_channels = cfg.attention_channels;
  run.checkpoint_every = cfg.checkpoint_every;
  run.checkpoint_path = out_path(cfg, "checkpoint.rstw");

  TransferNet net(cfg.transfer, cfg.seed);
  TrainResult result = train(net, run, weights);
  net.save(out_path(cfg, "transfer.rstw"));
  write_curve_csv(out_path(cfg, "train_curve.csv"), result.curve);
  if (result.diverged) {
    std::cerr << "training diverged after " << result.curve.size() << " iterations\n";
    return 2;
  }
  std::cout << "wrote " << out_path(cfg, "transfer.rstw") << " (" << result.curve.size()
            << " iterations)\n";
  return 0;
}

int cmd_compare_baseline(const std::string& config_path, const std::string& output_dir) {
  JobConfig cfg = load_config(config_path, output_dir);
  LossNetWeights weights = require_loss_net(cfg);
  if (cfg.content.size() < 5) {
    throw std::runtime_error("compare-baseline: needs at least 5 content images, got " +
                             std::to_string(cfg.content.size()));
  }
  for (size_t i = 0; i < cfg.content.size(); ++i) {
    char tag[16];
    std::snprintf(tag, sizeof(tag), "%02zu", i);
    {
      StylizeJob job = make_job(cfg, i, /*baseline=*/false);
      job.content_mask = load_mask_flexible(cfg.content_mask.at(i), 2);
      job.style_mask = load_mask_flexible(cfg.style_mask, 2);
      StylizeResult r = stylize_by_optimization(job, weights);
      write_curve_csv(out_path(cfg, std::string("curve_region_") + tag + ".csv"), r.curve);
      save_image(r.output, out_path(cfg, std::string("output_region_") + tag + ".png"));
    }
    {
      StylizeJob job = make_job(cfg, i, /*baseline=*/true);
      StylizeResult r = stylize_by_optimization(job, weights);
      write_curve_csv(out_path(cfg, std::string("curve_baseline_") + tag + ".csv"), r.curve);
      save_image(r.output, out_path(cfg, std::string("output_baseline_") + tag + ".png"));
    }
    std::cout << "image " << i << ": region + baseline curves written\n";
  }
  return 0;
}

double time_seconds(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

int cmd_bench(const std::string& output_dir, std::uint64_t seed) {
  fs::create_directories(output_dir);
  LossNetWeights weights{make_random_weight_file(seed)};
  TransferNet net(TransferNetSpec{}, seed);

  const int sizes[3] = {256, 512, 1024};
  double t_baseline[3], t_region[3], t_ff[3];
  for (int i = 0; i < 3; ++i) {
    const int n = sizes[i];
    DeskFixture fx = make_desk_fixture(n, seed + n);
    LossConfig loss;

    LossContext baseline_ctx = build_baseline_context(fx.content, fx.style, loss, weights);
    Tensor x = Tensor::uniform(fx.content.shape(), seed, 0.f, 255.f);
    Tensor grad;
    t_baseline[i] =
        time_seconds([&] { evaluate_objective(x, baseline_ctx, weights, &grad); });

    LossContext region_ctx =
        build_loss_context(fx.content, fx.content_mask, fx.style, fx.style_mask, loss, weights);
    t_region[i] = time_seconds([&] { evaluate_objective(x, region_ctx, weights, &grad); });

    Tensor out;
    t_ff[i] = time_seconds([&] { out = net.forward(fx.content); });
    std::cerr << "measured " << n << "x" << n << "\n";
  }

  std::ostringstream table;
  table << "Speed in seconds per pass, measured on this machine\n";
  table << "(optimization rows: one objective+gradient evaluation; multiply by the\n";
  table << " iteration count for a full stylization)\n\n";
  auto row = [&table](const std::string& name, auto v0, auto v1, auto v2) {
    table << std::left << std::setw(28) << name << std::right << std::setw(12) << v0
          << std::setw(12) << v1 << std::setw(12) << v2 << "\n";
  };
  table << std::fixed << std::setprecision(3);
  row("method", "256x256", "512x512", "1024x1024");
  row("optimization, unmasked", t_baseline[0], t_baseline[1], t_baseline[2]);
  row("optimization, region", t_region[0], t_region[1], t_region[2]);
  row("feed-forward", t_ff[0], t_ff[1], t_ff[2]);
  table << std::setprecision(1);
  row("speedup vs unmasked", t_baseline[0] / t_ff[0], t_baseline[1] / t_ff[1],
      t_baseline[2] / t_ff[2]);
  row("speedup vs region", t_region[0] / t_ff[0], t_region[1] / t_ff[1], t_region[2] / t_ff[2]);

  std::cout << table.str();
  std::ofstream os((fs::path(output_dir) / "bench.txt").string());
  os << table.str();
  return 0;
}

int cmd_pupil_check(const std::string& config_path, const std::string& output_dir) {
  JobConfig cfg = load_config(config_path, output_dir);
  LossNetWeights weights = require_loss_net(cfg);
  if (cfg.content.size() != cfg.content_mask.size() || cfg.content.empty()) {
    throw std::runtime_error("pupil-check: needs matching content and content_mask lists");
  }

  std::vector<PupilShiftRow> rows;
  for (size_t i = 0; i < cfg.content.size(); ++i) {
    StylizeJob job;
    job.content = load_image(cfg.content[i]);
    job.content_mask = load_mask_flexible(cfg.content_mask[i], 2);
    job.style = load_image(cfg.style);
    job.style_mask = load_mask_flexible(cfg.style_mask, 2);
    job.loss = cfg.loss;
    job.solver = cfg.lbfgs;
    job.seed = cfg.seed + i;
    job.attention_channels = cfg.attention_channels;
    StylizeResult r = stylize_by_optimization(job, weights);

    PupilShiftRow row;
    row.name = fs::path(cfg.content[i]).stem().string();
    row.before = pupil_center(job.content_mask, 0);
    row.after = pupil_center(estimate_pupil_weight(r.output), 0);
    rows.push_back(row);
    std::cerr << row.name << " done\n";
  }
  PupilShiftReport report = make_shift_report(std::move(rows));

  std::ofstream os(out_path(cfg, "pupil_report.csv"));
  os << "# pupil centers are mask-derived centroids (automated analog of manual labeling)\n";
  write_shift_csv(os, report);
  std::cout << std::fixed << std::setprecision(2) << "pupil center shift: " << report.mean_shift
            << " +/- " << report.std_shift << " px (eye width=55px)\n";
  return 0;
}

int cmd_gen_weights(const std::string& out, std::uint64_t seed) {
  fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
  save_weights(out, make_random_weight_file(seed));
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_gen_fixtures(const std::string& out_dir, int eyes) {
  const fs::path root(out_dir);
  fs::create_directories(root / "eyes");
  fs::create_directories(root / "desk");

  for (int i = 0; i < eyes; ++i) {
    EyeFixture fx = make_eye_fixture(static_cast<std::uint64_t>(i) + 1);
    char name[32];
    std::snprintf(name, sizeof(name), "eye_%02d.png", i);
    save_image(fx.image, (root / "eyes" / name).string());
    std::snprintf(name, sizeof(name), "eye_%02d_mask.png", i);
    save_mask(fx.mask, (root / "eyes" / name).string());
  }
  EyeFixture style = make_style_eye();
  save_image(style.image, (root / "eyes" / "style.png").string());
  save_mask(style.mask, (root / "eyes" / "style_mask.png").string());

  for (int size : {16, 32, 64}) {
    DeskFixture fx = make_desk_fixture(size, static_cast<std::uint64_t>(size));
    const std::string tag = std::to_string(size);
    save_image(fx.content, (root / "desk" / ("content" + tag + ".png")).string());
    save_mask(fx.content_mask, (root / "desk" / ("content" + tag + "_mask.png")).string());
    save_image(fx.style, (root / "desk" / ("style" + tag + ".png")).string());
    save_mask(fx.style_mask, (root / "desk" / ("style" + tag + "_mask.png")).string());
  }
  std::cout << "fixtures written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"region-masked style transfer for eye-image purification"};
  app.require_subcommand(1);

  std::string config_path, output_dir, weights_out = "lossnet.rslw", fixture_dir = "fixtures";
  std::uint64_t seed = 1;
  int eyes = 50;
  bool baseline = false;

  auto add_config = [&](CLI::App* sub, bool required = true) {
    auto* opt = sub->add_option("--config", config_path, "job config (JSON)");
    if (required) opt->required();
    sub->add_option("--output-dir", output_dir, "override paths.output_dir");
  };

  auto* s_opt = app.add_subcommand("stylize-opt", "optimize an output image (projected L-BFGS)");
  add_config(s_opt);
  s_opt->add_flag("--baseline", baseline, "use the unmasked comparison objective");
  auto* s_ff = app.add_subcommand("stylize-ff", "single feed-forward pass");
  add_config(s_ff);
  auto* s_train = app.add_subcommand("train", "train the feed-forward network");
  add_config(s_train);
  auto* s_cmp = app.add_subcommand("compare-baseline",
                                   "emit loss curves for both objectives on >= 5 images");
  add_config(s_cmp);
  auto* s_bench = app.add_subcommand("bench", "three-resolution speed table");
  s_bench->add_option("--output-dir", output_dir, "where bench.txt goes")->required();
  s_bench->add_option("--seed", seed, "weight seed");
  auto* s_pupil = app.add_subcommand("pupil-check", "pupil-center preservation report");
  add_config(s_pupil);
  auto* s_gw = app.add_subcommand("gen-weights", "write a seeded random loss-net weight file");
  s_gw->add_option("--out", weights_out, "output path");
  s_gw->add_option("--seed", seed, "generator seed");
  auto* s_gf = app.add_subcommand("gen-fixtures", "write the synthetic PNG fixture set");
  s_gf->add_option("--out", fixture_dir, "output directory");
  s_gf->add_option("--eyes", eyes, "number of eye fixtures");

  CLI11_PARSE(app, argc, argv);

  try {
    if (s_opt->parsed()) return cmd_stylize_opt(config_path, output_dir, baseline);
    if (s_ff->parsed()) return cmd_stylize_ff(config_path, output_dir);
    if (s_train->parsed()) return cmd_train(config_path, output_dir);
    if (s_cmp->parsed()) return cmd_compare_baseline(config_path, output_dir);
    if (s_bench->parsed()) return cmd_bench(output_dir, seed);
    if (s_pupil->parsed()) return cmd_pupil_check(config_path, output_dir);
    if (s_gw->parsed()) return cmd_gen_weights(weights_out, seed);
    if (s_gf->parsed()) return cmd_gen_fixtures(fixture_dir, eyes);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
