#pragma once

#include <cmath>
#include <string>

#include "cgfm/common.hpp"

namespace cgfm {

/// @brief Affine-path scheduler: the pair (alpha_t, beta_t) with analytic derivatives.
///
/// Defines the path X_t = alpha_t * X1 + beta_t * X0. All four kinds satisfy the
/// boundary conditions alpha(0)=0, alpha(1)=1, beta(0)=1, beta(1)=0, with alpha
/// strictly increasing and beta strictly decreasing on (0,1):
///
///   CondOT    alpha = t            beta = 1 - t
///   Poly(n)   alpha = t^n          beta = 1 - t^n          (integer n >= 2)
///   LinearVP  alpha = t            beta = sqrt(1 - t^2)
///   Cosine    alpha = sin(pi t/2)  beta = cos(pi t/2)
///
/// CondOT and Poly are mass-preserving (alpha + beta = 1); LinearVP and Cosine
/// satisfy alpha^2 + beta^2 = 1. Derivatives are closed-form, never finite
/// differences.
struct Scheduler {
  enum class Kind { CondOT, Poly, LinearVP, Cosine };

  Kind kind = Kind::CondOT;
  int n = 3;  ///< polynomial degree, Poly only

  static Scheduler condot() { return {Kind::CondOT, 3}; }
  static Scheduler poly(int degree) {
    if (degree < 2) {
      throw ConfigError("poly scheduler requires integer degree n >= 2, got n=" +
                        std::to_string(degree));
    }
    return {Kind::Poly, degree};
  }
  static Scheduler linear_vp() { return {Kind::LinearVP, 3}; }
  static Scheduler cosine() { return {Kind::Cosine, 3}; }
};

struct SchedulerEval {
  double alpha;
  double beta;
  double d_alpha;
  double d_beta;
};

/// Evaluates (alpha, beta, d_alpha, d_beta) at t in [0,1].
///
/// LinearVP's d_beta diverges at t = 1; derivative evaluation there is clamped
/// to t = 1 - 1e-9 as a guard (samplers never evaluate at t = 1).
inline SchedulerEval eval(const Scheduler& s, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("scheduler eval: t must lie in [0,1], got t=" + std::to_string(t));
  }
  switch (s.kind) {
    case Scheduler::Kind::CondOT:
      return {t, 1.0 - t, 1.0, -1.0};
    case Scheduler::Kind::Poly: {
      if (s.n < 2) {
        throw ConfigError("poly scheduler requires integer degree n >= 2, got n=" +
                          std::to_string(s.n));
      }
      const double a = std::pow(t, s.n);
      const double da = s.n * std::pow(t, s.n - 1);
      return {a, 1.0 - a, da, -da};
    }
    case Scheduler::Kind::LinearVP: {
      const double beta = std::sqrt(std::max(0.0, 1.0 - t * t));
      const double td = std::min(t, 1.0 - 1e-9);
      const double d_beta = -td / std::sqrt(1.0 - td * td);
      return {t, beta, 1.0, d_beta};
    }
    case Scheduler::Kind::Cosine: {
      constexpr double half_pi = 1.5707963267948966;
      return {std::sin(half_pi * t), std::cos(half_pi * t), half_pi * std::cos(half_pi * t),
              -half_pi * std::sin(half_pi * t)};
    }
  }
  throw ConfigError("scheduler eval: unknown kind");
}

/// Path point alpha_t * x1 + beta_t * x0 (elementwise).
inline Mat interpolate(const Scheduler& s, double t, const Mat& x0, const Mat& x1) {
  require_same_shape(x0, x1, "interpolate");
  const SchedulerEval e = eval(s, t);
  return e.alpha * x1 + e.beta * x0;
}

/// Parses the CLI/config scheduler string: condot | poly:<n> | vp | cosine.
inline Scheduler parse_scheduler(const std::string& spec) {
  if (spec == "condot") return Scheduler::condot();
  if (spec == "vp") return Scheduler::linear_vp();
  if (spec == "cosine") return Scheduler::cosine();
  if (spec == "poly") return Scheduler::poly(3);
  if (spec.rfind("poly:", 0) == 0) {
    const std::string arg = spec.substr(5);
    std::size_t used = 0;
    int n = 0;
    try {
      n = std::stoi(arg, &used);
    } catch (const std::exception&) {
      throw ConfigError("scheduler: cannot parse poly degree from '" + spec + "'");
    }
    if (used != arg.size()) {
      throw ConfigError("scheduler: cannot parse poly degree from '" + spec + "'");
    }
    return Scheduler::poly(n);
  }
  throw ConfigError("scheduler: unknown spec '" + spec +
                    "' (expected condot | poly:<n> | vp | cosine)");
}

inline std::string to_string(const Scheduler& s) {
  switch (s.kind) {
    case Scheduler::Kind::CondOT: return "condot";
    case Scheduler::Kind::Poly: return "poly:" + std::to_string(s.n);
    case Scheduler::Kind::LinearVP: return "vp";
    case Scheduler::Kind::Cosine: return "cosine";
  }
  return "?";
}

}  // namespace cgfm
