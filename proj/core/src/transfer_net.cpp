#include "purify/transfer_net.hpp"

#include <cmath>

#include "purify/weights_io.hpp"

namespace purify {

namespace {

constexpr const char* kMagic = "RSTW";

ad::Var conv_block(ad::Var x, const ad::Var& k, const ad::Var& b, int stride, int reflect_pad) {
  if (reflect_pad > 0) x = ad::pad_reflect(x, reflect_pad);
  return ad::conv2d(x, k, b, stride, 0);
}

}  // namespace

TransferNet::ConvParams TransferNet::make_conv(Shape shape, std::mt19937_64& rng,
                                               bool transposed) {
  // Forward kernels are (out, in, kh, kw); transposed kernels (in, out, kh, kw).
  const int fan = transposed ? shape.n : shape.c;
  const int out_channels = transposed ? shape.c : shape.n;
  const double fan_in = static_cast<double>(fan) * shape.h * shape.w;
  Tensor k = Tensor::gaussian(shape, rng(), 0.0, std::sqrt(2.0 / fan_in));
  Tensor b(1, out_channels, 1, 1);
  return {ad::leaf(std::move(k), "kernel"), ad::leaf(std::move(b), "bias")};
}

TransferNet::NormParams TransferNet::make_norm(int channels) {
  NormParams p{ad::leaf(Tensor::ones({1, channels, 1, 1}), "gamma"),
               ad::leaf(Tensor(1, channels, 1, 1), "beta"), ad::BatchNormState(channels)};
  return p;
}

TransferNet::TransferNet(TransferNetSpec spec, std::uint64_t seed) : spec_(spec) {
  if (spec_.base_width < 1 || spec_.residual_blocks < 0) {
    throw std::invalid_argument("TransferNetSpec: invalid widths/blocks");
  }
  std::mt19937_64 rng(seed);
  const int w = spec_.base_width;
  conv_in_ = make_conv({w, 3, 9, 9}, rng);
  bn_in_ = make_norm(w);
  down1_ = make_conv({2 * w, w, 3, 3}, rng);
  bn_down1_ = make_norm(2 * w);
  down2_ = make_conv({4 * w, 2 * w, 3, 3}, rng);
  bn_down2_ = make_norm(4 * w);
  for (int i = 0; i < spec_.residual_blocks; ++i) {
    ResidualBlock blk{make_conv({4 * w, 4 * w, 3, 3}, rng), make_conv({4 * w, 4 * w, 3, 3}, rng),
                      make_norm(4 * w), make_norm(4 * w)};
    blocks_.push_back(std::move(blk));
  }
  // transposed kernels are (in_channels, out_channels, 4, 4)
  up1_ = make_conv({4 * w, 2 * w, 4, 4}, rng, /*transposed=*/true);
  bn_up1_ = make_norm(2 * w);
  up2_ = make_conv({2 * w, w, 4, 4}, rng, /*transposed=*/true);
  bn_up2_ = make_norm(w);
  conv_out_ = make_conv({3, w, 9, 9}, rng);
}

ad::Var TransferNet::forward_graph(ad::Var input, bool training, std::mt19937_64& rng) const {
  const Shape s = input->value.shape();
  if (s.h < 16 || s.w < 16) {
    throw std::invalid_argument("transfer net: input dims must be >= 16, got " + s.str());
  }
  const int pad_h = (4 - s.h % 4) % 4;
  const int pad_w = (4 - s.w % 4) % 4;
  ad::Var x = (pad_h || pad_w) ? ad::pad_reflect(input, 0, pad_h, 0, pad_w) : input;

  x = ad::relu(ad::batch_norm(conv_block(x, conv_in_.kernel, conv_in_.bias, 1, 4), bn_in_.gamma,
                              bn_in_.beta, &bn_in_.state, training));
  x = ad::relu(ad::batch_norm(conv_block(x, down1_.kernel, down1_.bias, 2, 1), bn_down1_.gamma,
                              bn_down1_.beta, &bn_down1_.state, training));
  x = ad::relu(ad::batch_norm(conv_block(x, down2_.kernel, down2_.bias, 2, 1), bn_down2_.gamma,
                              bn_down2_.beta, &bn_down2_.state, training));

  for (const auto& blk : blocks_) {
    ad::Var branch = conv_block(x, blk.conv1.kernel, blk.conv1.bias, 1, 1);
    branch = ad::dropout(branch, spec_.dropout_p, rng, training);
    branch = ad::relu(
        ad::batch_norm(branch, blk.bn1.gamma, blk.bn1.beta, &blk.bn1.state, training));
    branch = conv_block(branch, blk.conv2.kernel, blk.conv2.bias, 1, 1);
    branch = ad::dropout(branch, spec_.dropout_p, rng, training);
    branch = ad::batch_norm(branch, blk.bn2.gamma, blk.bn2.beta, &blk.bn2.state, training);
    x = ad::add(x, branch);
  }

  x = ad::relu(ad::batch_norm(ad::conv_transpose2d(x, up1_.kernel, up1_.bias, 2, 1), bn_up1_.gamma,
                              bn_up1_.beta, &bn_up1_.state, training));
  x = ad::relu(ad::batch_norm(ad::conv_transpose2d(x, up2_.kernel, up2_.bias, 2, 1), bn_up2_.gamma,
                              bn_up2_.beta, &bn_up2_.state, training));
  x = ad::scaled_tanh(conv_block(x, conv_out_.kernel, conv_out_.bias, 1, 4));

  if (pad_h || pad_w) x = ad::crop(x, 0, 0, s.h, s.w);
  return x;
}

Tensor TransferNet::forward(const Tensor& input) const {
  std::mt19937_64 rng(0);
  return forward_graph(ad::constant(input, "input"), /*training=*/false, rng)->value;
}

std::vector<ad::Var> TransferNet::parameters() const {
  std::vector<ad::Var> out;
  auto push_conv = [&out](const ConvParams& c) {
    out.push_back(c.kernel);
    out.push_back(c.bias);
  };
  auto push_norm = [&out](const NormParams& n) {
    out.push_back(n.gamma);
    out.push_back(n.beta);
  };
  push_conv(conv_in_);
  push_norm(bn_in_);
  push_conv(down1_);
  push_norm(bn_down1_);
  push_conv(down2_);
  push_norm(bn_down2_);
  for (const auto& blk : blocks_) {
    push_conv(blk.conv1);
    push_norm(blk.bn1);
    push_conv(blk.conv2);
    push_norm(blk.bn2);
  }
  push_conv(up1_);
  push_norm(bn_up1_);
  push_conv(up2_);
  push_norm(bn_up2_);
  push_conv(conv_out_);
  return out;
}

void TransferNet::zero_residual_blocks() {
  for (auto& blk : blocks_) {
    blk.conv1.kernel->value.fill(0.f);
    blk.conv1.bias->value.fill(0.f);
    blk.conv2.kernel->value.fill(0.f);
    blk.conv2.bias->value.fill(0.f);
    blk.bn1.beta->value.fill(0.f);
    blk.bn2.beta->value.fill(0.f);
    blk.bn1.state = ad::BatchNormState(blk.bn1.gamma->value.shape().c);
    blk.bn2.state = ad::BatchNormState(blk.bn2.gamma->value.shape().c);
  }
}

namespace {

void add_conv_record(WeightFile& file, const std::string& name, const ad::Var& kernel,
                     const ad::Var& bias) {
  WeightRecord rec;
  rec.name = name;
  rec.shape = kernel->value.shape();
  rec.kernel.assign(kernel->value.data(), kernel->value.data() + kernel->value.numel());
  rec.bias.assign(bias->value.data(), bias->value.data() + bias->value.numel());
  file.records.push_back(std::move(rec));
}

Tensor swap01(const Tensor& t) {
  const Shape s = t.shape();
  Tensor out(Shape{s.c, s.n, s.h, s.w});
  for (int a = 0; a < s.n; ++a)
    for (int b = 0; b < s.c; ++b)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) out.at(b, a, y, x) = t.at(a, b, y, x);
  return out;
}

/// Transposed-conv kernels live as (in, out, kh, kw) in memory but the weight
/// format requires bias length == shape[0], so they are stored output-major.
void add_conv_t_record(WeightFile& file, const std::string& name, const ad::Var& kernel,
                       const ad::Var& bias) {
  WeightRecord rec;
  rec.name = name;
  Tensor stored = swap01(kernel->value);
  rec.shape = stored.shape();
  rec.kernel.assign(stored.data(), stored.data() + stored.numel());
  rec.bias.assign(bias->value.data(), bias->value.data() + bias->value.numel());
  file.records.push_back(std::move(rec));
}

void add_norm_records(WeightFile& file, const std::string& name, const ad::Var& gamma,
                      const ad::Var& beta, const ad::BatchNormState& state) {
  const int c = gamma->value.shape().c;
  WeightRecord scale;
  scale.name = name + ".scale";
  scale.shape = Shape{c, 1, 1, 1};
  scale.kernel.assign(gamma->value.data(), gamma->value.data() + c);
  scale.bias.assign(beta->value.data(), beta->value.data() + c);
  file.records.push_back(std::move(scale));
  WeightRecord stats;
  stats.name = name + ".stats";
  stats.shape = Shape{c, 1, 1, 1};
  stats.kernel.assign(state.running_mean.data(), state.running_mean.data() + c);
  stats.bias.assign(state.running_var.data(), state.running_var.data() + c);
  file.records.push_back(std::move(stats));
}

void read_conv_record(const WeightFile& file, const std::string& name, ad::Var& kernel,
                      ad::Var& bias) {
  const WeightRecord* rec = file.find(name);
  if (!rec) throw std::runtime_error("checkpoint is missing record \"" + name + "\"");
  Tensor k(rec->shape);
  std::copy(rec->kernel.begin(), rec->kernel.end(), k.data());
  Tensor b(1, static_cast<int>(rec->bias.size()), 1, 1);
  std::copy(rec->bias.begin(), rec->bias.end(), b.data());
  kernel = ad::leaf(std::move(k), name + ".k");
  bias = ad::leaf(std::move(b), name + ".b");
}

void read_conv_t_record(const WeightFile& file, const std::string& name, ad::Var& kernel,
                        ad::Var& bias) {
  read_conv_record(file, name, kernel, bias);
  kernel = ad::leaf(swap01(kernel->value), name + ".k");
}

void read_norm_records(const WeightFile& file, const std::string& name, ad::Var& gamma,
                       ad::Var& beta, ad::BatchNormState& state) {
  const WeightRecord* scale = file.find(name + ".scale");
  const WeightRecord* stats = file.find(name + ".stats");
  if (!scale || !stats) throw std::runtime_error("checkpoint is missing record \"" + name + "\"");
  const int c = scale->shape.n;
  Tensor g(1, c, 1, 1), b(1, c, 1, 1);
  std::copy(scale->kernel.begin(), scale->kernel.end(), g.data());
  std::copy(scale->bias.begin(), scale->bias.end(), b.data());
  gamma = ad::leaf(std::move(g), name + ".gamma");
  beta = ad::leaf(std::move(b), name + ".beta");
  state = ad::BatchNormState(c);
  std::copy(stats->kernel.begin(), stats->kernel.end(), state.running_mean.data());
  std::copy(stats->bias.begin(), stats->bias.end(), state.running_var.data());
}

}  // namespace

void TransferNet::save(const std::string& path) const {
  WeightFile file;
  file.magic = kMagic;
  file.means = {0.f, 0.f, 0.f};
  add_conv_record(file, "conv_in", conv_in_.kernel, conv_in_.bias);
  add_norm_records(file, "bn_in", bn_in_.gamma, bn_in_.beta, bn_in_.state);
  add_conv_record(file, "down1", down1_.kernel, down1_.bias);
  add_norm_records(file, "bn_down1", bn_down1_.gamma, bn_down1_.beta, bn_down1_.state);
  add_conv_record(file, "down2", down2_.kernel, down2_.bias);
  add_norm_records(file, "bn_down2", bn_down2_.gamma, bn_down2_.beta, bn_down2_.state);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string base = "res" + std::to_string(i + 1);
    add_conv_record(file, base + ".conv1", blocks_[i].conv1.kernel, blocks_[i].conv1.bias);
    add_norm_records(file, base + ".bn1", blocks_[i].bn1.gamma, blocks_[i].bn1.beta,
                     blocks_[i].bn1.state);
    add_conv_record(file, base + ".conv2", blocks_[i].conv2.kernel, blocks_[i].conv2.bias);
    add_norm_records(file, base + ".bn2", blocks_[i].bn2.gamma, blocks_[i].bn2.beta,
                     blocks_[i].bn2.state);
  }
  add_conv_t_record(file, "up1", up1_.kernel, up1_.bias);
  add_norm_records(file, "bn_up1", bn_up1_.gamma, bn_up1_.beta, bn_up1_.state);
  add_conv_t_record(file, "up2", up2_.kernel, up2_.bias);
  add_norm_records(file, "bn_up2", bn_up2_.gamma, bn_up2_.beta, bn_up2_.state);
  add_conv_record(file, "conv_out", conv_out_.kernel, conv_out_.bias);
  save_weight_file(path, file);
}

TransferNet TransferNet::load(const std::string& path) {
  WeightFile file = load_weight_file(path, kMagic);
  TransferNet net;
  read_conv_record(file, "conv_in", net.conv_in_.kernel, net.conv_in_.bias);
  net.spec_.base_width = net.conv_in_.kernel->value.shape().n;
  read_norm_records(file, "bn_in", net.bn_in_.gamma, net.bn_in_.beta, net.bn_in_.state);
  read_conv_record(file, "down1", net.down1_.kernel, net.down1_.bias);
  read_norm_records(file, "bn_down1", net.bn_down1_.gamma, net.bn_down1_.beta,
                    net.bn_down1_.state);
  read_conv_record(file, "down2", net.down2_.kernel, net.down2_.bias);
  read_norm_records(file, "bn_down2", net.bn_down2_.gamma, net.bn_down2_.beta,
                    net.bn_down2_.state);
  for (int i = 1;; ++i) {
    const std::string base = "res" + std::to_string(i);
    if (!file.find(base + ".conv1")) break;
    ResidualBlock blk;
    read_conv_record(file, base + ".conv1", blk.conv1.kernel, blk.conv1.bias);
    read_norm_records(file, base + ".bn1", blk.bn1.gamma, blk.bn1.beta, blk.bn1.state);
    read_conv_record(file, base + ".conv2", blk.conv2.kernel, blk.conv2.bias);
    read_norm_records(file, base + ".bn2", blk.bn2.gamma, blk.bn2.beta, blk.bn2.state);
    net.blocks_.push_back(std::move(blk));
  }
  net.spec_.residual_blocks = static_cast<int>(net.blocks_.size());
  read_conv_t_record(file, "up1", net.up1_.kernel, net.up1_.bias);
  read_norm_records(file, "bn_up1", net.bn_up1_.gamma, net.bn_up1_.beta, net.bn_up1_.state);
  read_conv_t_record(file, "up2", net.up2_.kernel, net.up2_.bias);
  read_norm_records(file, "bn_up2", net.bn_up2_.gamma, net.bn_up2_.beta, net.bn_up2_.state);
  read_conv_record(file, "conv_out", net.conv_out_.kernel, net.conv_out_.bias);
  return net;
}

TrainResult train(TransferNet& net, const TrainRun& run, const LossNetWeights& loss_net) {
  if (run.content.empty()) throw std::invalid_argument("train: content set must be non-empty");
  run.adam.validate();
  run.loss.validate();

  // Loss contexts depend only on (content, style); build each once.
  std::vector<LossContext> contexts;
  contexts.reserve(run.content.size());
  for (const auto& [image, mask] : run.content) {
    contexts.push_back(build_loss_context(image, mask, run.style, run.style_mask, run.loss,
                                          loss_net, run.attention_channels));
  }

  std::vector<ad::Var> params = net.parameters();
  std::vector<AdamState> states(params.size());
  std::mt19937_64 rng(run.seed);

  TrainResult result;
  for (int iter = 0; iter < run.adam.iterations; ++iter) {
    ad::Var batch_loss;
    LossBreakdown mean;
    const int batch = std::min<int>(run.adam.batch_size, static_cast<int>(run.content.size()));
    for (int b = 0; b < batch; ++b) {
      const size_t item =
          (static_cast<size_t>(iter) * batch + b) % run.content.size();
      ad::Var input = ad::constant(run.content[item].first, "content");
      ad::Var output = net.forward_graph(input, /*training=*/true, rng);
      auto feats = extract_feature_graph(output, loss_net, run.loss.taps);
      LossBreakdown item_bd;
      ad::Var loss = region_loss_graph<float>(feats, contexts[item], output, &item_bd);
      batch_loss = batch_loss ? ad::add(batch_loss, loss) : loss;
      mean.l_gc += item_bd.l_gc / batch;
      mean.l_lc += item_bd.l_lc / batch;
      mean.l_gs += item_bd.l_gs / batch;
      mean.l_ls += item_bd.l_ls / batch;
      mean.l_tv += item_bd.l_tv / batch;
      mean.total += item_bd.total / batch;
    }
    batch_loss = ad::scale(batch_loss, 1.0 / batch);
    if (!std::isfinite(static_cast<double>(batch_loss->value[0]))) {
      result.diverged = true;
      break;
    }
    mean.l_feat = run.loss.lambda_g * mean.l_gc + run.loss.lambda_l * mean.l_lc;
    mean.l_style = run.loss.lambda_g * mean.l_gs + run.loss.lambda_l * mean.l_ls;
    result.curve.push_back(mean);

    auto grads = ad::backward(batch_loss, params, /*release_memory=*/true);
    bool finite = true;
    for (const auto& p : params) {
      if (!grads.at(p).all_finite()) {
        finite = false;
        break;
      }
    }
    if (!finite) {
      result.diverged = true;
      break;
    }
    for (size_t i = 0; i < params.size(); ++i) {
      adam_step(params[i]->value, grads.at(params[i]), states[i], run.adam);
    }

    if (run.checkpoint_every > 0 && !run.checkpoint_path.empty() &&
        (iter + 1) % run.checkpoint_every == 0) {
      net.save(run.checkpoint_path);
    }
  }
  return result;
}

}  // namespace purify
