#include "purify/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace purify {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::invalid_argument("config: " + where + ": " + what);
}

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) fail(where, "unknown key \"" + key + "\"");
  }
}

std::vector<std::string> path_list(const json& v, const std::string& where) {
  if (v.is_string()) return {v.get<std::string>()};
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(where, "expected string entries");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  fail(where, "expected string or list of strings");
}

void parse_paths(const json& p, JobConfig& cfg) {
  check_keys(p, "paths",
             {"content", "content_mask", "style", "style_mask", "loss_weights",
              "transfer_weights", "output_dir"});
  if (p.contains("content")) cfg.content = path_list(p["content"], "paths.content");
  if (p.contains("content_mask")) {
    cfg.content_mask = path_list(p["content_mask"], "paths.content_mask");
  }
  if (p.contains("style")) cfg.style = p["style"].get<std::string>();
  if (p.contains("style_mask")) cfg.style_mask = p["style_mask"].get<std::string>();
  if (p.contains("loss_weights")) cfg.loss_weights = p["loss_weights"].get<std::string>();
  if (p.contains("transfer_weights")) {
    cfg.transfer_weights = p["transfer_weights"].get<std::string>();
  }
  if (p.contains("output_dir")) cfg.output_dir = p["output_dir"].get<std::string>();
}

void parse_taps(const json& t, TapSet& taps) {
  check_keys(t, "loss.taps", {"global_content", "local_content", "global_style", "local_style"});
  if (t.contains("global_content")) taps.global_content = t["global_content"].get<std::string>();
  if (t.contains("local_content")) taps.local_content = t["local_content"].get<std::string>();
  if (t.contains("global_style")) {
    taps.global_style = t["global_style"].get<std::vector<std::string>>();
  }
  if (t.contains("local_style")) {
    taps.local_style = t["local_style"].get<std::vector<std::string>>();
  }
}

void parse_loss(const json& l, LossConfig& loss) {
  check_keys(l, "loss",
             {"alpha", "beta", "lambda_g", "lambda_l", "tv_weight", "mask_channels", "taps",
              "alpha_per_layer", "beta_per_layer"});
  if (l.contains("alpha")) loss.alpha = l["alpha"].get<double>();
  if (l.contains("beta")) loss.beta = l["beta"].get<double>();
  if (l.contains("lambda_g")) loss.lambda_g = l["lambda_g"].get<double>();
  if (l.contains("lambda_l")) loss.lambda_l = l["lambda_l"].get<double>();
  if (l.contains("tv_weight")) loss.theta = l["tv_weight"].get<double>();
  if (l.contains("mask_channels")) loss.mask_channels = l["mask_channels"].get<int>();
  if (l.contains("taps")) parse_taps(l["taps"], loss.taps);
  if (l.contains("alpha_per_layer")) {
    for (const auto& [layer, v] : l["alpha_per_layer"].items()) {
      loss.alpha_per_layer[layer] = v.get<double>();
    }
  }
  if (l.contains("beta_per_layer")) {
    for (const auto& [layer, v] : l["beta_per_layer"].items()) {
      loss.beta_per_layer[layer] = v.get<double>();
    }
  }
}

void parse_lbfgs(const json& s, LbfgsConfig& lbfgs) {
  check_keys(s, "lbfgs",
             {"max_iters", "history_size", "box_lo", "box_hi", "armijo_c1", "tolerance"});
  if (s.contains("max_iters")) lbfgs.max_iters = s["max_iters"].get<int>();
  if (s.contains("history_size")) lbfgs.history_size = s["history_size"].get<int>();
  if (s.contains("box_lo")) lbfgs.box_lo = s["box_lo"].get<double>();
  if (s.contains("box_hi")) lbfgs.box_hi = s["box_hi"].get<double>();
  if (s.contains("armijo_c1")) lbfgs.armijo_c1 = s["armijo_c1"].get<double>();
  if (s.contains("tolerance")) lbfgs.tolerance = s["tolerance"].get<double>();
}

void parse_adam(const json& s, AdamConfig& adam) {
  check_keys(s, "adam", {"lr", "beta1", "beta2", "epsilon", "batch_size", "iterations"});
  if (s.contains("lr")) adam.lr = s["lr"].get<double>();
  if (s.contains("beta1")) adam.beta1 = s["beta1"].get<double>();
  if (s.contains("beta2")) adam.beta2 = s["beta2"].get<double>();
  if (s.contains("epsilon")) adam.eps = s["epsilon"].get<double>();
  if (s.contains("batch_size")) adam.batch_size = s["batch_size"].get<int>();
  if (s.contains("iterations")) adam.iterations = s["iterations"].get<int>();
}

void parse_transfer(const json& t, TransferNetSpec& spec) {
  check_keys(t, "transfer", {"base_width", "residual_blocks", "dropout"});
  if (t.contains("base_width")) spec.base_width = t["base_width"].get<int>();
  if (t.contains("residual_blocks")) spec.residual_blocks = t["residual_blocks"].get<int>();
  if (t.contains("dropout")) spec.dropout_p = t["dropout"].get<double>();
}

}  // namespace

JobConfig parse_job_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");

  JobConfig cfg;
  check_keys(doc, "top level",
             {"paths", "loss", "lbfgs", "adam", "transfer", "seed", "attention_channels",
              "checkpoint_every"});
  if (doc.contains("paths")) parse_paths(doc["paths"], cfg);
  if (doc.contains("loss")) parse_loss(doc["loss"], cfg.loss);
  if (doc.contains("lbfgs")) parse_lbfgs(doc["lbfgs"], cfg.lbfgs);
  if (doc.contains("adam")) parse_adam(doc["adam"], cfg.adam);
  if (doc.contains("transfer")) parse_transfer(doc["transfer"], cfg.transfer);
  if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
  if (doc.contains("attention_channels")) {
    cfg.attention_channels = doc["attention_channels"].get<std::vector<int>>();
  }
  if (doc.contains("checkpoint_every")) cfg.checkpoint_every = doc["checkpoint_every"].get<int>();

  cfg.loss.validate();
  // nlohmann's default object keeps keys sorted, which is exactly the
  // normalization the round-trip contract asks for.
  cfg.normalized = doc.dump(2) + "\n";
  return cfg;
}

JobConfig load_job_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_job_config(ss.str());
}

std::string serialize_job_config(const JobConfig& cfg) { return cfg.normalized; }

}  // namespace purify
