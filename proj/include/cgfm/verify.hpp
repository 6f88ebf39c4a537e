#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "cgfm/common.hpp"
#include "cgfm/netcore.hpp"
#include "cgfm/oracle.hpp"
#include "cgfm/pathkit.hpp"
#include "cgfm/rng.hpp"
#include "cgfm/sampling.hpp"
#include "cgfm/scheduler.hpp"

namespace cgfm {

/// One verification check outcome.
struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double ms = 0.0;
};

namespace verify_detail {

inline std::vector<Scheduler> all_schedulers() {
  return {Scheduler::condot(), Scheduler::poly(3), Scheduler::linear_vp(), Scheduler::cosine()};
}

template <class Fn>
CheckResult timed(const std::string& name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.name = name;
  r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace verify_detail

/// Boundary conditions alpha(0)=0, alpha(1)=1, beta(0)=1, beta(1)=0 to 1e-12.
inline CheckResult check_scheduler_boundaries() {
  double worst = 0.0;
  for (const Scheduler& s : verify_detail::all_schedulers()) {
    const SchedulerEval e0 = eval(s, 0.0);
    const SchedulerEval e1 = eval(s, 1.0);
    worst = std::max({worst, std::abs(e0.alpha), std::abs(e0.beta - 1.0), std::abs(e1.alpha - 1.0),
                      std::abs(e1.beta)});
  }
  CheckResult r;
  r.pass = worst <= 1e-12;
  r.detail = "max boundary deviation " + fmt_g17(worst);
  return r;
}

/// Analytic derivatives vs central finite differences at random t.
inline CheckResult check_scheduler_derivatives(int n_samples = 1000) {
  RngStream rng(0xA11CE5ULL);
  const double h = 1e-6;
  double worst = 0.0;
  for (const Scheduler& s : verify_detail::all_schedulers()) {
    for (int i = 0; i < n_samples; ++i) {
      double t = h + (1.0 - 2.0 * h) * rng.uniform01();
      if (s.kind == Scheduler::Kind::LinearVP && t > 1.0 - 1e-3) t = 1.0 - 1e-3;
      const SchedulerEval e = eval(s, t);
      const SchedulerEval ep = eval(s, t + h);
      const SchedulerEval em = eval(s, t - h);
      worst = std::max(worst, std::abs((ep.alpha - em.alpha) / (2 * h) - e.d_alpha));
      worst = std::max(worst, std::abs((ep.beta - em.beta) / (2 * h) - e.d_beta));
    }
  }
  CheckResult r;
  r.pass = worst <= 1e-5;
  r.detail = "max |analytic - fd| " + fmt_g17(worst);
  return r;
}

/// conditional_velocity equals d/dt interpolate (central differences).
inline CheckResult check_velocity_consistency(int n_per_scheduler = 100) {
  RngStream rng(0xBEEF01ULL);
  const double h = 1e-6;
  double worst = 0.0;
  for (const Scheduler& s : verify_detail::all_schedulers()) {
    for (int i = 0; i < n_per_scheduler; ++i) {
      const double t = 2 * h + (0.99 - 4 * h) * rng.uniform01();
      Mat x0(2, 3), x1(2, 3);
      for (int r2 = 0; r2 < 2; ++r2)
        for (int c = 0; c < 3; ++c) {
          x0(r2, c) = rng.normal();
          x1(r2, c) = rng.normal();
        }
      const Mat v = conditional_velocity(s, t, x0, x1);
      const Mat fd = (interpolate(s, t + h, x0, x1) - interpolate(s, t - h, x0, x1)) / (2 * h);
      worst = std::max(worst, (v - fd).cwiseAbs().maxCoeff());
    }
  }
  CheckResult r;
  r.pass = worst <= 1e-5;
  r.detail = "max |velocity - fd(interpolate)| " + fmt_g17(worst);
  return r;
}

/// backward vs central finite differences on random small networks.
inline CheckResult check_net_gradient(int n_nets = 20) {
  RngStream rng(0xC0FFEEULL);
  double worst = 0.0;
  for (int rep = 0; rep < n_nets; ++rep) {
    const int C = 1 + static_cast<int>(rng.below(3));
    const int Fh = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(12 / C)));
    const int L = 1 + static_cast<int>(rng.below(6));
    const int K = static_cast<int>(rng.below(4));
    std::vector<int> hidden;
    const int n_hidden = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < n_hidden; ++i) hidden.push_back(4 + static_cast<int>(rng.below(29)));
    VelocityNet net = init_net(C, L, Fh, hidden, K, rng);
    const double t = 0.05 + 0.9 * rng.uniform01();
    Mat xt(C, Fh), h(C, L), upstream(C, Fh);
    for (int r2 = 0; r2 < C; ++r2) {
      for (int c = 0; c < Fh; ++c) {
        xt(r2, c) = rng.normal();
        upstream(r2, c) = rng.normal();
      }
      for (int c = 0; c < L; ++c) h(r2, c) = rng.normal();
    }
    const Vec bw = flatten_grads(net, backward(net, t, xt, h, upstream));
    VelocityNet probe = net;
    auto loss = [&](const Vec& p) {
      set_flat_params(probe, p);
      return (forward(probe, t, xt, h).cwiseProduct(upstream)).sum();
    };
    const Vec fd = finite_diff_grad(loss, get_flat_params(net), 1e-5);
    for (Eigen::Index i = 0; i < bw.size(); ++i) {
      const double rel = std::abs(bw[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-4);
      worst = std::max(worst, rel);
    }
  }
  CheckResult r;
  r.pass = worst < 1e-4;
  r.detail = "max relative gradient error " + fmt_g17(worst) + " over " + std::to_string(n_nets) +
             " nets";
  return r;
}

/// Gradient equality of the guided and conditional-guided objectives on the
/// enumeration toy, over freshly initialized tiny networks.
inline CheckResult check_loss_gradient_equality(int n_repeats = 5) {
  const DiscreteCouplingToy toy = loss_equality_toy();
  const std::vector<double> tgrid = loss_equality_tgrid();
  double worst = 0.0;
  for (int i = 0; i < n_repeats; ++i) {
    const ScalarNetFamily fam = tiny_scalar_net(0x5EED0000ULL + i);
    const EnumeratedGrads res = enumerate_loss_grads(fam, toy, tgrid, 64);
    worst = std::max(worst, (res.grad_gm - res.grad_cgm).cwiseAbs().maxCoeff());
  }
  CheckResult r;
  r.pass = worst < 1e-6;
  r.detail = "max entrywise |grad_gm - grad_cgm| " + fmt_g17(worst);
  return r;
}

/// At the exact minimizer (family value = marginal velocity) the guided
/// gradient vanishes, the gradients still agree, and the loss values differ by
/// the strictly positive conditional variance.
inline CheckResult check_loss_equality_at_minimizer() {
  AffineOfMarginalFamily fam;
  fam.toy = loss_equality_toy();
  const EnumeratedGrads res = enumerate_loss_grads(fam, fam.toy, loss_equality_tgrid(), 64);
  const double grad_gap = (res.grad_gm - res.grad_cgm).cwiseAbs().maxCoeff();
  const double gm_norm = res.grad_gm.cwiseAbs().maxCoeff();
  const double loss_gap = res.loss_cgm - res.loss_gm;
  CheckResult r;
  r.pass = grad_gap < 1e-6 && gm_norm < 1e-12 && loss_gap > 1e-9;
  r.detail = "grad gap " + fmt_g17(grad_gap) + ", |grad_gm| " + fmt_g17(gm_norm) +
             ", loss gap " + fmt_g17(loss_gap);
  return r;
}

/// Transport gate: integrating smoothed source samples along the marginal
/// velocity reproduces the target weights (nearest-atom mass fractions).
inline CheckResult check_discrete_transport(int n_samples = 10000, int n_steps = 100) {
  const DiscreteCouplingToy toy = transport_toy();
  RngStream rng(0x7A95ULL);
  VelocityFn field = [&](double t, const Mat& x) {
    Mat u(1, 1);
    u(0, 0) = discrete_marginal_velocity(toy, t, x(0, 0));
    return u;
  };
  std::vector<double> mass(toy.target_atoms.size(), 0.0);
  for (int k = 0; k < n_samples; ++k) {
    const double pick = rng.uniform01();
    std::size_t i = 0;
    double acc = toy.source_weights[0];
    while (i + 1 < toy.source_atoms.size() && pick > acc) acc += toy.source_weights[++i];
    Mat x(1, 1);
    x(0, 0) = toy.source_atoms[i] + toy.sigma * rng.normal();
    const double terminal = sample_ode(field, x, n_steps)(0, 0);
    std::size_t nearest = 0;
    for (std::size_t j = 1; j < toy.target_atoms.size(); ++j) {
      if (std::abs(terminal - toy.target_atoms[j]) <
          std::abs(terminal - toy.target_atoms[nearest]))
        nearest = j;
    }
    mass[nearest] += 1.0;
  }
  double worst = 0.0;
  std::string fr;
  for (std::size_t j = 0; j < mass.size(); ++j) {
    mass[j] /= n_samples;
    worst = std::max(worst, std::abs(mass[j] - toy.target_weights[j]));
    fr += (j ? "," : "") + fmt_g17(mass[j]);
  }
  CheckResult r;
  r.pass = worst <= 0.02;
  r.detail = "terminal fractions [" + fr + "], max deviation " + fmt_g17(worst);
  return r;
}

namespace verify_detail {

/// Velocity field built from the closed-form Gaussian posterior under the given
/// parameterization; mu0/var0 -> mu1/var1 on the scheduler path.
inline VelocityFn gaussian_oracle_field(const Scheduler& s, PredictionTarget target, double mu0,
                                        double var0, double mu1, double var1) {
  return [=](double t, const Mat& x) {
    Mat out(x.rows(), x.cols());
    const SchedulerEval e = eval(s, t);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double x1h = gaussian_posterior_mean(s, t, x(r, c), mu0, var0, mu1, var1);
        const double x0h = gaussian_posterior_mean_x0(s, t, x(r, c), mu0, var0, mu1, var1);
        switch (target) {
          case PredictionTarget::Ut: out(r, c) = e.d_alpha * x1h + e.d_beta * x0h; break;
          case PredictionTarget::X1Pred: out(r, c) = x1h; break;
          case PredictionTarget::X0Pred: out(r, c) = x0h; break;
        }
      }
    }
    if (target == PredictionTarget::Ut) return out;
    return velocity_from_prediction(target, s, t, x, out);
  };
}

}  // namespace verify_detail

/// Gaussian toy N(0,1) -> N(3,1): terminal moments over Monte-Carlo trajectories.
inline CheckResult check_gaussian_transport(int n_traj = 10000, int n_steps = 40) {
  const Scheduler s = Scheduler::condot();
  const VelocityFn field =
      verify_detail::gaussian_oracle_field(s, PredictionTarget::X1Pred, 0.0, 1.0, 3.0, 1.0);
  RngStream rng(0x6A0551ULL);
  double sum = 0.0, sumsq = 0.0;
  for (int k = 0; k < n_traj; ++k) {
    Mat x(1, 1);
    x(0, 0) = rng.normal();
    const double terminal = sample_ode(field, x, n_steps)(0, 0);
    sum += terminal;
    sumsq += terminal * terminal;
  }
  const double mean = sum / n_traj;
  const double var = (sumsq - n_traj * mean * mean) / (n_traj - 1);
  const double sd = std::sqrt(var);
  CheckResult r;
  r.pass = std::abs(mean - 3.0) <= 0.05 && std::abs(sd - 1.0) <= 0.05;
  r.detail = "terminal mean " + fmt_g17(mean) + ", std " + fmt_g17(sd);
  return r;
}

/// The three prediction parameterizations, fed mutually consistent posterior
/// oracles, must produce identical trajectories.
inline CheckResult check_parameterization_equivalence(int n_traj = 10000, int n_steps = 40) {
  const Scheduler s = Scheduler::condot();
  const VelocityFn f_x1 =
      verify_detail::gaussian_oracle_field(s, PredictionTarget::X1Pred, 0.0, 1.0, 3.0, 1.0);
  const VelocityFn f_x0 =
      verify_detail::gaussian_oracle_field(s, PredictionTarget::X0Pred, 0.0, 1.0, 3.0, 1.0);
  const VelocityFn f_ut =
      verify_detail::gaussian_oracle_field(s, PredictionTarget::Ut, 0.0, 1.0, 3.0, 1.0);
  RngStream rng(0xE0112ULL);
  double worst = 0.0;
  for (int k = 0; k < n_traj; ++k) {
    Mat x(1, 1);
    x(0, 0) = rng.normal();
    const double t1 = sample_ode(f_x1, x, n_steps)(0, 0);
    const double t0 = sample_ode(f_x0, x, n_steps)(0, 0);
    const double tu = sample_ode(f_ut, x, n_steps)(0, 0);
    worst = std::max({worst, std::abs(t1 - t0), std::abs(t1 - tu), std::abs(t0 - tu)});
  }
  CheckResult r;
  r.pass = worst < 1e-8;
  r.detail = "max per-trajectory parameterization gap " + fmt_g17(worst);
  return r;
}

/// Second-order convergence of the midpoint rule on the linear field u = x.
inline CheckResult check_integrator_order() {
  const VelocityFn field = [](double, const Mat& x) { return x; };
  const double exact = std::exp(1.0);
  std::vector<double> errs;
  for (int N : {10, 20, 40, 80}) {
    Mat x(1, 1);
    x(0, 0) = 1.0;
    errs.push_back(std::abs(sample_ode(field, x, N, 0.0)(0, 0) - exact));
  }
  bool ok = true;
  std::string detail = "error ratios per doubling:";
  for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
    const double ratio = errs[i] / errs[i + 1];
    detail += " " + fmt_g17(ratio);
    ok = ok && ratio >= 3.0 && ratio <= 5.0;
  }
  CheckResult r;
  r.pass = ok;
  r.detail = detail;
  return r;
}

/// Posterior sanity: hand-computed value, degenerate-variance case, and
/// affinity in x at fixed t.
inline CheckResult check_posterior_affinity() {
  const Scheduler s = Scheduler::condot();
  const double hand = gaussian_posterior_mean(s, 0.5, 1.0, 0.0, 1.0, 0.0, 1.0);
  const double degen = gaussian_posterior_mean(s, 0.3, 7.0, 2.0, 1.0, 5.0, 0.0);
  const double u1 = gaussian_posterior_mean(s, 0.4, -1.0, 0.0, 1.0, 3.0, 1.0);
  const double u2 = gaussian_posterior_mean(s, 0.4, 0.5, 0.0, 1.0, 3.0, 1.0);
  const double u3 = gaussian_posterior_mean(s, 0.4, 2.0, 0.0, 1.0, 3.0, 1.0);
  // three collinear x values: second difference of an affine map vanishes
  const double second_diff = (u3 - u2) / 1.5 - (u2 - u1) / 1.5;
  CheckResult r;
  const bool ok_hand = std::abs(hand - 1.0) <= 1e-12;
  const bool ok_degen = std::abs(degen - 5.0) <= 1e-12;
  const bool ok_affine = std::abs(second_diff) <= 1e-10;
  r.pass = ok_hand && ok_degen && ok_affine;
  r.detail = "hand value " + fmt_g17(hand) + ", degenerate " + fmt_g17(degen) +
             ", affinity residual " + fmt_g17(second_diff);
  return r;
}

/// Runs the full oracle suite. quick mode shrinks Monte-Carlo counts to keep
/// runtime low; gates and tolerances are unchanged.
inline std::vector<CheckResult> run_verification(bool quick = false) {
  using verify_detail::timed;
  const int mc = quick ? 2000 : 10000;
  const int nets = quick ? 5 : 20;
  const int reps = quick ? 2 : 5;
  std::vector<CheckResult> out;
  out.push_back(timed("scheduler_boundaries", [&] { return check_scheduler_boundaries(); }));
  out.push_back(timed("scheduler_derivatives",
                      [&] { return check_scheduler_derivatives(quick ? 200 : 1000); }));
  out.push_back(
      timed("velocity_consistency", [&] { return check_velocity_consistency(quick ? 25 : 100); }));
  out.push_back(timed("net_gradient_check", [&] { return check_net_gradient(nets); }));
  out.push_back(
      timed("loss_gradient_equality", [&] { return check_loss_gradient_equality(reps); }));
  out.push_back(
      timed("loss_equality_at_minimizer", [&] { return check_loss_equality_at_minimizer(); }));
  out.push_back(timed("discrete_transport", [&] { return check_discrete_transport(mc); }));
  out.push_back(timed("gaussian_transport", [&] { return check_gaussian_transport(mc); }));
  out.push_back(timed("parameterization_equivalence",
                      [&] { return check_parameterization_equivalence(mc); }));
  out.push_back(timed("integrator_order", [&] { return check_integrator_order(); }));
  out.push_back(timed("posterior_affinity", [&] { return check_posterior_affinity(); }));
  return out;
}

}  // namespace cgfm
