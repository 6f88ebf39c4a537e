#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cgfm/common.hpp"
#include "cgfm/rng.hpp"
#include "cgfm/scheduler.hpp"

namespace cgfm {

/// @brief Where x0 comes from: standard Gaussian noise, or a noise-smoothed
/// auxiliary forecast. sigma is the smoothing level (AuxOutput only).
struct SourceMode {
  enum class Mode { Noise, AuxOutput };

  Mode mode = Mode::Noise;
  double sigma = 1.0;

  static SourceMode noise() { return {Mode::Noise, 0.0}; }
  static SourceMode aux_output(double sigma) {
    if (sigma < 0.0) throw ConfigError("source sigma must be >= 0, got " + std::to_string(sigma));
    return {Mode::AuxOutput, sigma};
  }
  bool is_aux() const { return mode == Mode::AuxOutput; }
};

/// @brief What the network regresses: the conditional velocity, the source
/// endpoint, or the target endpoint. The three are algebraically interchangeable
/// at sampling time.
enum class PredictionTarget { Ut, X0Pred, X1Pred };

inline PredictionTarget parse_target(const std::string& s) {
  if (s == "ut") return PredictionTarget::Ut;
  if (s == "x0") return PredictionTarget::X0Pred;
  if (s == "x1") return PredictionTarget::X1Pred;
  throw ConfigError("target: unknown spec '" + s + "' (expected ut | x0 | x1)");
}

inline std::string to_string(PredictionTarget t) {
  switch (t) {
    case PredictionTarget::Ut: return "ut";
    case PredictionTarget::X0Pred: return "x0";
    case PredictionTarget::X1Pred: return "x1";
  }
  return "?";
}

/// @brief One draw from the conditional independent coupling, with its path point.
///
/// x0 and x1 are drawn independently given the history h; xt is always the
/// interpolation at construction time.
struct CouplingSample {
  Mat h;   ///< C x L history window (normalized units)
  Mat x0;  ///< C x Fh source sample
  Mat x1;  ///< C x Fh target future window
  double t = 0.0;
  Mat xt;  ///< C x Fh path point alpha_t x1 + beta_t x0
};

inline CouplingSample make_coupling_sample(const Scheduler& s, double t, Mat h, Mat x0, Mat x1) {
  CouplingSample c;
  c.xt = interpolate(s, t, x0, x1);
  c.h = std::move(h);
  c.x0 = std::move(x0);
  c.x1 = std::move(x1);
  c.t = t;
  return c;
}

/// Noise smoothing: x0 + sigma * eps with eps i.i.d. standard normal.
/// sigma = 0 returns x0 unchanged (bit-identical).
inline Mat smooth(const Mat& x0, double sigma, RngStream& rng) {
  if (sigma < 0.0) throw ConfigError("smooth: sigma must be >= 0");
  if (sigma == 0.0) return x0;
  Mat out = x0;
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) += sigma * rng.normal();
  return out;
}

/// Lookup for auxiliary predictions, keyed by global window index.
/// Returns nullopt when no prediction exists for the window.
using AuxLookup = std::function<std::optional<Mat>(long)>;

/// @brief Draws (x0, x1) for one dataset window under the conditional
/// independent coupling. Noise mode: x0 i.i.d. standard normal. AuxOutput mode:
/// x0 = smooth(aux(h), sigma). x1 is the window's future, untouched.
inline CouplingSample draw_coupling(const Mat& h, const Mat& x1, long window_idx,
                                    const SourceMode& mode, const AuxLookup& aux,
                                    RngStream& rng) {
  Mat x0;
  if (mode.mode == SourceMode::Mode::Noise) {
    x0 = Mat(x1.rows(), x1.cols());
    for (Eigen::Index c = 0; c < x0.cols(); ++c)
      for (Eigen::Index r = 0; r < x0.rows(); ++r) x0(r, c) = rng.normal();
  } else {
    std::optional<Mat> a = aux ? aux(window_idx) : std::nullopt;
    if (!a.has_value()) {
      throw LookupError("auxiliary prediction missing for window " + std::to_string(window_idx));
    }
    if (a->rows() != x1.rows() || a->cols() != x1.cols()) {
      throw ShapeError("auxiliary prediction for window " + std::to_string(window_idx) +
                       " has shape " + std::to_string(a->rows()) + "x" + std::to_string(a->cols()) +
                       ", expected " + std::to_string(x1.rows()) + "x" + std::to_string(x1.cols()));
    }
    x0 = smooth(*a, mode.sigma, rng);
  }
  CouplingSample c;
  c.h = h;
  c.x0 = std::move(x0);
  c.x1 = x1;
  c.t = 0.0;
  c.xt = c.x0;  // placeholder until t is drawn; callers set (t, xt) together
  return c;
}

/// Training target g_t: Ut -> d_alpha x1 + d_beta x0; X0Pred -> x0; X1Pred -> x1.
inline Mat target_g(PredictionTarget target, const Scheduler& s, double t, const Mat& x0,
                    const Mat& x1) {
  switch (target) {
    case PredictionTarget::X0Pred: return x0;
    case PredictionTarget::X1Pred: return x1;
    case PredictionTarget::Ut: {
      const SchedulerEval e = eval(s, t);
      return e.d_alpha * x1 + e.d_beta * x0;
    }
  }
  throw ConfigError("target_g: unknown target");
}

/// Conditional velocity d_alpha x1 + d_beta x0: the exact time derivative of
/// interpolate along the path through (x0, x1).
inline Mat conditional_velocity(const Scheduler& s, double t, const Mat& x0, const Mat& x1) {
  require_same_shape(x0, x1, "conditional_velocity");
  const SchedulerEval e = eval(s, t);
  return e.d_alpha * x1 + e.d_beta * x0;
}

}  // namespace cgfm
