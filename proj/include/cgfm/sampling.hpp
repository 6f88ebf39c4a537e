#pragma once

#include <atomic>
#include <functional>
#include <iostream>
#include <limits>
#include <vector>

#include "cgfm/common.hpp"
#include "cgfm/netcore.hpp"
#include "cgfm/pathkit.hpp"
#include "cgfm/rng.hpp"
#include "cgfm/scheduler.hpp"

namespace cgfm {

/// @brief Sampler configuration: uniform time grid t_i = i/N, prediction-target
/// parameterization, source mode, denominator floor, optional multi-sample
/// averaging.
struct SampleConfig {
  int steps = 20;          ///< N; grid has N+1 points
  PredictionTarget target = PredictionTarget::X1Pred;
  SourceMode source = SourceMode::noise();
  double eps_den = 1e-6;   ///< denominator floor and evaluation-time clamp
  int num_samples = 1;     ///< > 1 averages independent runs entrywise
  std::uint64_t seed = 1;
};

/// Instrumentation collected during integration: evaluation-time range and
/// denominator-floor activations. Lets tests assert endpoint avoidance.
struct SampleStats {
  double min_eval_t = std::numeric_limits<double>::infinity();
  double max_eval_t = -std::numeric_limits<double>::infinity();
  long floor_hits = 0;
  long evals = 0;
};

/// Uniform grid [0, 1/N, ..., 1]. Velocity is never evaluated at t = 1: the
/// midpoint rule's last evaluation sits at 1 - 1/(2N).
inline std::vector<double> time_grid(int N) {
  if (N < 1) throw ConfigError("time_grid: N must be >= 1, got " + std::to_string(N));
  std::vector<double> t(N + 1);
  for (int i = 0; i <= N; ++i) t[i] = static_cast<double>(i) / N;
  return t;
}

namespace detail {
inline void warn_floor_once() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true)) {
    std::cerr << "[cgfm] warning: sampler denominator floor activated "
                 "(scheduler coefficient below eps_den)\n";
  }
}
}  // namespace detail

/// @brief Converts a network prediction into a velocity under the chosen
/// parameterization.
///
///   Ut      u = net_output (verbatim)
///   X1Pred  u = (db/b) x + (da - a db/b) xhat1,   b floored at eps_den
///   X0Pred  u = (da/a) x + (db - b da/a) xhat0,   a floored at eps_den
///
/// The floor only guards pathological coefficients (Poly-n near t = 0); on the
/// standard grids it never activates. Activation is counted in stats and logged
/// once per process.
inline Mat velocity_from_prediction(PredictionTarget target, const Scheduler& s, double t,
                                    const Mat& x, const Mat& net_output, double eps_den = 1e-6,
                                    SampleStats* stats = nullptr) {
  if (target == PredictionTarget::Ut) return net_output;
  require_same_shape(x, net_output, "velocity_from_prediction");
  const SchedulerEval e = eval(s, t);
  if (target == PredictionTarget::X1Pred) {
    double beta = e.beta;
    if (beta < eps_den) {
      beta = eps_den;
      if (stats) stats->floor_hits += 1;
      detail::warn_floor_once();
    }
    const double c_x = e.d_beta / beta;
    return c_x * x + (e.d_alpha - e.alpha * c_x) * net_output;
  }
  double alpha = e.alpha;
  if (alpha < eps_den) {
    alpha = eps_den;
    if (stats) stats->floor_hits += 1;
    detail::warn_floor_once();
  }
  const double c_x = e.d_alpha / alpha;
  return c_x * x + (e.d_beta - e.beta * c_x) * net_output;
}

/// Velocity field callback: (t, x) -> velocity, same shape as x.
using VelocityFn = std::function<Mat(double, const Mat&)>;

/// @brief Midpoint (explicit RK2) integration of dx/dt = u(t, x) from t=0 to t=1.
///
/// Exactly Algorithm-2 stepping: x_mid = x + (dt/2) u(t_i, x); x += dt u(t_mid, x_mid).
/// Evaluation times are clamped to [eps_den, 1 - eps_den] so that endpoint-singular
/// parameterizations (X0Pred at t=0) stay well-defined; the clamp applies the same
/// time to every parameterization, which preserves their mutual equivalence.
inline Mat sample_ode(const VelocityFn& u, Mat x, int N, double eps_den = 1e-6,
                      SampleStats* stats = nullptr) {
  if (N < 1) throw ConfigError("sample_ode: N must be >= 1");
  const double dt = 1.0 / N;
  auto eval_at = [&](double t, const Mat& state) {
    const double tc = std::min(std::max(t, eps_den), 1.0 - eps_den);
    if (stats) {
      stats->evals += 1;
      stats->min_eval_t = std::min(stats->min_eval_t, tc);
      stats->max_eval_t = std::max(stats->max_eval_t, tc);
    }
    return u(tc, state);
  };
  for (int i = 0; i < N; ++i) {
    const double t = static_cast<double>(i) / N;
    const Mat u1 = eval_at(t, x);
    const Mat xmid = x + (0.5 * dt) * u1;
    const Mat umid = eval_at(t + 0.5 * dt, xmid);
    x += dt * umid;
    if (!all_finite(x)) {
      throw NumericError("sample_ode: non-finite state at step " + std::to_string(i) +
                         ", t=" + std::to_string(t));
    }
  }
  return x;
}

/// @brief Forecast for one history window: draws x0 from the source, integrates
/// the learned velocity to t=1. With num_samples > 1, returns the entrywise mean
/// over independent runs (fresh source draws, same parameters).
inline Mat sample(const VelocityNet& net, const Mat& h, const SampleConfig& cfg,
                  const Scheduler& s, const AuxLookup& aux, long window_idx,
                  SampleStats* stats = nullptr) {
  if (cfg.num_samples < 1) throw ConfigError("sample: num_samples must be >= 1");
  VelocityFn field = [&](double t, const Mat& x) {
    const Mat out = forward(net, t, x, h);
    return velocity_from_prediction(cfg.target, s, t, x, out, cfg.eps_den, stats);
  };
  const std::uint64_t win_seed = derive_seed(cfg.seed, "forecast", static_cast<std::uint64_t>(window_idx));
  Mat acc = Mat::Zero(net.C, net.Fh);
  for (int k = 0; k < cfg.num_samples; ++k) {
    RngStream rng(derive_seed(win_seed, "sample", static_cast<std::uint64_t>(k)));
    Mat x0;
    if (cfg.source.mode == SourceMode::Mode::Noise) {
      x0 = Mat(net.C, net.Fh);
      for (Eigen::Index c = 0; c < x0.cols(); ++c)
        for (Eigen::Index r = 0; r < x0.rows(); ++r) x0(r, c) = rng.normal();
    } else {
      std::optional<Mat> a = aux ? aux(window_idx) : std::nullopt;
      if (!a.has_value()) {
        throw LookupError("auxiliary prediction missing for window " + std::to_string(window_idx));
      }
      x0 = smooth(*a, cfg.source.sigma, rng);
    }
    acc += sample_ode(field, std::move(x0), cfg.steps, cfg.eps_den, stats);
  }
  return acc / cfg.num_samples;
}

}  // namespace cgfm
