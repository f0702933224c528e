#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "purify/optimize.hpp"
#include "purify/region_loss.hpp"
#include "purify/transfer_net.hpp"

namespace purify {

/// Parsed job description shared by all CLI commands. Parsing is strict:
/// unknown keys anywhere in the document are rejected, and the loss weights
/// must pass LossConfig::validate().
struct JobConfig {
  // Paths. `content`/`content_mask` accept a single file or a list; single
  // entries are the common case for stylization, lists feed train/pupil-check.
  std::vector<std::string> content;
  std::vector<std::string> content_mask;
  std::string style;
  std::string style_mask;
  std::string loss_weights;      // loss-network weight file
  std::string transfer_weights;  // feed-forward network weight file
  std::string output_dir;

  LossConfig loss;
  LbfgsConfig lbfgs;
  AdamConfig adam;
  TransferNetSpec transfer;

  std::uint64_t seed = 0;
  std::vector<int> attention_channels = {0};
  int checkpoint_every = 0;

  // Normalized source document (alphabetical keys), kept so serialization
  // reproduces exactly the keys that were present.
  std::string normalized;
};

JobConfig parse_job_config(const std::string& json_text);
JobConfig load_job_config(const std::string& path);

/// Emits the key-order-normalized document; serialize(parse(doc)) is stable
/// under re-parsing.
std::string serialize_job_config(const JobConfig& cfg);

}  // namespace purify
