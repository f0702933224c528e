#include "purify/optimize.hpp"

#include <cmath>
#include <deque>

namespace purify {

namespace {

void project(Tensor& x, const LbfgsConfig& cfg) {
  x.clamp_inplace(static_cast<float>(cfg.box_lo), static_cast<float>(cfg.box_hi));
}

}  // namespace

LbfgsResult lbfgs_projected(const Objective& objective, Tensor x0, const LbfgsConfig& cfg,
                            const std::function<void(int, const Tensor&, double)>& on_accept) {
  if (cfg.max_iters <= 0) throw std::invalid_argument("lbfgs: max_iters must be > 0");
  if (cfg.history_size < 1) throw std::invalid_argument("lbfgs: history_size must be >= 1");

  LbfgsResult result;
  Tensor x = std::move(x0);
  project(x, cfg);

  Tensor grad(x.shape());
  double f = objective(x, &grad);
  if (!std::isfinite(f) || !grad.all_finite()) {
    throw std::invalid_argument("lbfgs: objective not finite at the initial point");
  }
  result.trace.push_back({0, f, 0.0});
  if (on_accept) on_accept(0, x, f);

  std::deque<std::pair<Tensor, Tensor>> pairs;  // (s, y)
  std::deque<double> rho;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    // Gradient with the components that push against an active bound zeroed:
    // the projection would undo any motion along them, and letting them into
    // the two-loop recursion skews the direction on the free coordinates.
    Tensor g_free = grad;
    const float lo = static_cast<float>(cfg.box_lo);
    const float hi = static_cast<float>(cfg.box_hi);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      if ((x[i] <= lo && grad[i] > 0.f) || (x[i] >= hi && grad[i] < 0.f)) g_free[i] = 0.f;
    }

    double t = 1.0;
    Tensor x_new;
    double f_new = f;
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      // Two-loop recursion on -g_free; the second attempt (after clearing the
      // history on a failed line search) reduces to projected steepest descent.
      Tensor d = g_free;
      d.scale_inplace(-1.f);
      std::vector<double> alpha(pairs.size());
      for (int i = static_cast<int>(pairs.size()) - 1; i >= 0; --i) {
        alpha[i] = rho[i] * pairs[i].first.dot(d);
        d.axpy(static_cast<float>(-alpha[i]), pairs[i].second);
      }
      if (!pairs.empty()) {
        const auto& [s, y] = pairs.back();
        const double gamma = s.dot(y) / y.dot(y);
        d.scale_inplace(static_cast<float>(gamma));
      }
      for (size_t i = 0; i < pairs.size(); ++i) {
        const double beta = rho[i] * pairs[i].second.dot(d);
        d.axpy(static_cast<float>(alpha[i] - beta), pairs[i].first);
      }
      // Keep the direction inside the free subspace.
      for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (g_free[i] == 0.f && grad[i] != 0.f) d[i] = 0.f;
      }

      if (grad.dot(d) >= 0.0) {  // not a descent direction; fall back
        d = g_free;
        d.scale_inplace(-1.f);
        pairs.clear();
        rho.clear();
      }

      // Armijo backtracking on the projected trial point.
      t = 1.0;
      while (t >= 1e-12) {
        x_new = x;
        x_new.axpy(static_cast<float>(t), d);
        project(x_new, cfg);
        Tensor delta = x_new;
        delta.axpy(-1.f, x);
        const double directional = grad.dot(delta);
        if (directional >= 0.0) {  // projection removed all progress
          t *= 0.5;
          continue;
        }
        f_new = objective(x_new, nullptr);
        if (!std::isfinite(f_new)) {
          t *= 0.5;
          continue;
        }
        if (f_new <= f + cfg.armijo_c1 * directional) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        if (pairs.empty()) break;  // steepest descent already failed
        pairs.clear();  // stale curvature; retry with steepest descent
        rho.clear();
      }
    }
    if (!accepted) break;  // no further decrease available

    Tensor grad_new(x.shape());
    const double f_check = objective(x_new, &grad_new);
    if (!std::isfinite(f_check) || !grad_new.all_finite()) {
      result.aborted_nonfinite = true;
      break;  // keep the last valid iterate
    }

    Tensor s = x_new;
    s.axpy(-1.f, x);
    Tensor y = grad_new;
    y.axpy(-1.f, grad);
    const double sy = s.dot(y);
    if (sy > 1e-10) {
      pairs.emplace_back(std::move(s), std::move(y));
      rho.push_back(1.0 / sy);
      if (static_cast<int>(pairs.size()) > cfg.history_size) {
        pairs.pop_front();
        rho.pop_front();
      }
    }

    const double prev = f;
    x = std::move(x_new);
    grad = std::move(grad_new);
    f = f_new;
    result.trace.push_back({iter, f, t});
    if (on_accept) on_accept(iter, x, f);

    if (std::abs(prev - f) <= cfg.tolerance * std::max(1.0, std::abs(prev))) {
      result.converged = true;
      break;
    }
  }

  result.x = std::move(x);
  return result;
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, const AdamConfig& cfg) {
  cfg.validate();
  if (params.shape() != grads.shape()) {
    throw std::invalid_argument("adam_step: shape mismatch " + params.shape().str() + " vs " +
                                grads.shape().str());
  }
  if (state.m.empty()) {
    state.m = Tensor(params.shape());
    state.v = Tensor(params.shape());
    state.t = 0;
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (std::int64_t i = 0; i < params.numel(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<float>(m);
    state.v[i] = static_cast<float>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

}  // namespace purify
