#pragma once

#include <functional>
#include <vector>

#include "purify/tensor.hpp"

namespace purify {

/// Projected L-BFGS settings; iterates are cropped to [box_lo, box_hi].
struct LbfgsConfig {
  int max_iters = 500;
  int history_size = 10;
  double box_lo = 0.0;
  double box_hi = 255.0;
  double armijo_c1 = 1e-4;
  double tolerance = 1e-6;  // relative loss change
};

struct IterationRecord {
  int iter = 0;
  double loss = 0.0;
  double step = 0.0;
};

struct LbfgsResult {
  Tensor x;
  std::vector<IterationRecord> trace;  // index 0 is the initial loss
  bool aborted_nonfinite = false;
  bool converged = false;
};

/// Differentiable scalar objective; fills *grad when non-null.
using Objective = std::function<double(const Tensor&, Tensor* grad)>;

/// Two-loop-recursion L-BFGS with the iterate (not the gradient) projected
/// onto the box after every trial step, and Armijo backtracking, so the
/// recorded loss trace is non-increasing.
LbfgsResult lbfgs_projected(const Objective& objective, Tensor x0, const LbfgsConfig& cfg,
                            const std::function<void(int, const Tensor&, double)>& on_accept = {});

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 4;
  int iterations = 50000;

  void validate() const {
    if (lr <= 0.0) throw std::invalid_argument("AdamConfig: lr must be > 0");
  }
};

struct AdamState {
  Tensor m, v;
  int t = 0;
};

/// Standard bias-corrected Adam update, in place.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace purify
