#include <catch2/catch_amalgamated.hpp>

#include "cgfm/oracle.hpp"
#include "cgfm/verify.hpp"

using namespace cgfm;

TEST_CASE("gaussian posterior mean: hand value, degenerate target, affinity") {
  const Scheduler s = Scheduler::condot();
  // standard-normal endpoints at t = 1/2: E[X1 | X_t = 1] = 1 exactly
  CHECK(gaussian_posterior_mean(s, 0.5, 1.0, 0.0, 1.0, 0.0, 1.0) == 1.0);

  // var1 = 0 pins the posterior at mu1 regardless of x
  CHECK(gaussian_posterior_mean(s, 0.3, 5.0, 0.0, 1.0, 2.5, 0.0) == 2.5);
  CHECK(gaussian_posterior_mean(s, 0.3, -40.0, 0.0, 1.0, 2.5, 0.0) == 2.5);

  // both variances zero: degenerate path variance
  CHECK_THROWS_AS(gaussian_posterior_mean(s, 0.5, 0.0, 1.0, 0.0, 2.0, 0.0), NumericError);

  // affine in x at fixed t
  const auto m = [&](double x) {
    return gaussian_posterior_mean(s, 0.35, x, 0.2, 1.3, -0.5, 0.7);
  };
  CHECK(std::abs((m(2.0) - m(1.0)) - (m(1.0) - m(0.0))) < 1e-12);

  // alpha E[X1|x] + beta E[X0|x] = x identically
  RngStream rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const double t = 0.05 + 0.9 * rng.uniform01();
    const double x = 3.0 * rng.normal();
    const double mu0 = rng.normal(), mu1 = rng.normal();
    const double v0 = 0.2 + rng.uniform01(), v1 = 0.2 + rng.uniform01();
    const SchedulerEval e = eval(s, t);
    const double lhs = e.alpha * gaussian_posterior_mean(s, t, x, mu0, v0, mu1, v1) +
                       e.beta * gaussian_posterior_mean_x0(s, t, x, mu0, v0, mu1, v1);
    CHECK(std::abs(lhs - x) < 1e-12);
  }
}

TEST_CASE("gaussian posterior mean: Monte-Carlo bin estimate agrees") {
  const Scheduler s = Scheduler::condot();
  const double t = 0.3, mu0 = 0.2, var0 = 1.0, mu1 = 1.0, var1 = 0.5;
  const double x_star = 0.7, half_width = 0.025;
  const SchedulerEval e = eval(s, t);
  RngStream rng(0xBEEF);
  double sum = 0.0;
  long count = 0;
  for (long k = 0; k < 1000000; ++k) {
    const double x0 = mu0 + std::sqrt(var0) * rng.normal();
    const double x1 = mu1 + std::sqrt(var1) * rng.normal();
    const double xt = e.alpha * x1 + e.beta * x0;
    if (std::abs(xt - x_star) < half_width) {
      sum += x1;
      count += 1;
    }
  }
  REQUIRE(count > 10000);
  const double mc = sum / count;
  const double closed = gaussian_posterior_mean(s, t, x_star, mu0, var0, mu1, var1);
  CHECK(std::abs(mc - closed) < 0.02);
}

TEST_CASE("marginal velocity: single-pair toys reduce to the conditional velocity") {
  const std::vector<Scheduler> schedulers = {Scheduler::condot(), Scheduler::poly(3),
                                             Scheduler::linear_vp(), Scheduler::cosine()};
  RngStream rng(77);
  for (const Scheduler& s : schedulers) {
    DiscreteCouplingToy toy;
    toy.source_atoms = {0.4};
    toy.source_weights = {1.0};
    toy.target_atoms = {-1.2};
    toy.target_weights = {1.0};
    toy.sigma = 0.3;
    toy.scheduler = s;
    for (double t : {0.1, 0.4, 0.8}) {
      const SchedulerEval e = eval(s, t);
      for (int rep = 0; rep < 10; ++rep) {
        // off the mean path the smoothing draw is inferred: x0s = (x - alpha c)/beta
        const double x = e.alpha * toy.target_atoms[0] + e.beta * toy.source_atoms[0] +
                         0.5 * rng.normal();
        const double x0s = (x - e.alpha * toy.target_atoms[0]) / e.beta;
        Mat x0m(1, 1), x1m(1, 1);
        x0m(0, 0) = x0s;
        x1m(0, 0) = toy.target_atoms[0];
        const double expect = conditional_velocity(s, t, x0m, x1m)(0, 0);
        CHECK(std::abs(discrete_marginal_velocity(toy, t, x) - expect) < 1e-10);
      }
      // on the mean path the velocity is the straight pair velocity
      const double x_mean = e.alpha * toy.target_atoms[0] + e.beta * toy.source_atoms[0];
      const double straight = e.d_alpha * toy.target_atoms[0] + e.d_beta * toy.source_atoms[0];
      CHECK(std::abs(discrete_marginal_velocity(toy, t, x_mean) - straight) < 1e-12);
    }
  }
}

TEST_CASE("marginal velocity: symmetry, domain, and underflow guards") {
  DiscreteCouplingToy toy;
  toy.source_atoms = {-1.0, 1.0};
  toy.source_weights = {0.5, 0.5};
  toy.target_atoms = {-1.0, 1.0};
  toy.target_weights = {0.5, 0.5};
  toy.sigma = 0.25;
  for (double t : {0.1, 0.5, 0.9}) {
    CHECK(std::abs(discrete_marginal_velocity(toy, t, 0.0)) < 1e-12);
  }

  CHECK_THROWS_AS(discrete_marginal_velocity(toy, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(discrete_marginal_velocity(toy, -0.1, 0.0), DomainError);
  CHECK_THROWS_AS(discrete_marginal_velocity(toy, 0.5, 1e200), NumericError);
}

TEST_CASE("toy validation rejects malformed marginals") {
  DiscreteCouplingToy toy = transport_toy();
  toy.source_weights = {0.5, 0.6};
  CHECK_THROWS_AS(toy.validate(), ConfigError);

  toy = transport_toy();
  toy.target_weights = {1.2, -0.2};
  CHECK_THROWS_AS(toy.validate(), ConfigError);

  toy = transport_toy();
  toy.source_atoms = {0.0};
  CHECK_THROWS_AS(toy.validate(), ConfigError);

  toy = transport_toy();
  toy.sigma = 0.0;
  CHECK_THROWS_AS(toy.validate(), ConfigError);

  CHECK_NOTHROW(transport_toy().validate());
  CHECK_NOTHROW(loss_equality_toy().validate());
}

TEST_CASE("Gauss-Hermite: degenerate rule, normalization, normal moments") {
  const GaussHermite one = gauss_hermite(1);
  REQUIRE(one.nodes.size() == 1);
  CHECK(std::abs(one.nodes[0]) < 1e-15);
  CHECK(one.weights[0] == Catch::Approx(1.0).margin(1e-15));
  CHECK_THROWS_AS(gauss_hermite(0), ConfigError);

  const GaussHermite gh = gauss_hermite(64);
  double w_sum = 0.0, m1 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (int k = 0; k < 64; ++k) {
    const double x = gh.nodes[k], w = gh.weights[k];
    w_sum += w;
    m1 += w * x;
    m2 += w * x * x;
    m3 += w * x * x * x;
    m4 += w * x * x * x * x;
  }
  CHECK(w_sum == Catch::Approx(1.0).margin(1e-13));
  CHECK(std::abs(m1) < 1e-13);
  CHECK(m2 == Catch::Approx(1.0).margin(1e-12));
  CHECK(std::abs(m3) < 1e-12);
  CHECK(m4 == Catch::Approx(3.0).margin(1e-11));
}

TEST_CASE("enumeration oracle: gradients coincide and the gap is a constant offset") {
  const DiscreteCouplingToy toy = loss_equality_toy();
  const std::vector<double> tgrid = loss_equality_tgrid();

  // family = the marginal velocity itself: the marginal objective is minimized
  AffineOfMarginalFamily fam;
  fam.toy = toy;
  const EnumeratedGrads at_min = enumerate_loss_grads(fam, toy, tgrid);
  CHECK(at_min.outcomes == 2560);
  CHECK(at_min.grad_gm.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(at_min.grad_cgm.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(at_min.loss_gm < 1e-12);
  CHECK(at_min.loss_cgm > 1e-3);  // conditional variance keeps this away from zero

  // at arbitrary parameters the two gradients agree entrywise and the loss gap
  // is the same parameter-independent constant
  std::vector<double> gaps;
  for (std::uint64_t seed : {11ULL, 12ULL}) {
    const ScalarNetFamily net_fam = tiny_scalar_net(seed);
    const EnumeratedGrads g = enumerate_loss_grads(net_fam, toy, tgrid);
    CHECK((g.grad_gm - g.grad_cgm).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(g.loss_cgm - g.loss_gm > 1e-3);
    gaps.push_back(g.loss_cgm - g.loss_gm);
  }
  gaps.push_back(at_min.loss_cgm - at_min.loss_gm);
  CHECK(std::abs(gaps[0] - gaps[1]) < 1e-9);
  CHECK(std::abs(gaps[0] - gaps[2]) < 1e-9);
}

TEST_CASE("enumeration oracle: outcome budget is enforced") {
  const DiscreteCouplingToy toy = loss_equality_toy();
  AffineOfMarginalFamily fam;
  fam.toy = toy;
  CHECK_THROWS_AS(enumerate_loss_grads(fam, toy, linspace(0.05, 0.60, 40)), ConfigError);
  CHECK_THROWS_AS(enumerate_loss_grads(fam, toy, std::vector<double>{}), ConfigError);
}

TEST_CASE("enumeration oracle: analytic gradient matches finite differences") {
  const DiscreteCouplingToy toy = loss_equality_toy();
  const std::vector<double> tgrid = {0.2, 0.5};
  ScalarNetFamily fam = tiny_scalar_net(3);
  const EnumeratedGrads g = enumerate_loss_grads(fam, toy, tgrid, 16);

  ScalarNetFamily probe = fam;
  const auto loss_cgm = [&](const Vec& p) {
    set_flat_params(probe.net, p);
    return enumerate_loss_grads(probe, toy, tgrid, 16).loss_cgm;
  };
  const Vec fd = finite_diff_grad(loss_cgm, get_flat_params(fam.net), 1e-5);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    worst = std::max(worst, std::abs(fd[i] - g.grad_cgm[i]) / std::max(std::abs(fd[i]), 1e-3));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("finite differences: exact on quadratics, step-size sweet spot") {
  Vec theta(3);
  theta << 0.7, -1.2, 0.05;
  const auto quad = [](const Vec& p) { return p.squaredNorm(); };
  const Vec g = finite_diff_grad(quad, theta);
  CHECK((g - 2.0 * theta).cwiseAbs().maxCoeff() < 1e-9);

  // on exp, h = 1e-5 beats the too-coarse step and is not much worse than any
  // finer one (rounding takes over below)
  Vec t1(1);
  t1 << 0.3;
  const auto f = [](const Vec& p) { return std::exp(p[0]); };
  const double truth = std::exp(0.3);
  const double e4 = std::abs(finite_diff_grad(f, t1, 1e-4)[0] - truth);
  const double e5 = std::abs(finite_diff_grad(f, t1, 1e-5)[0] - truth);
  const double e6 = std::abs(finite_diff_grad(f, t1, 1e-6)[0] - truth);
  INFO("errors: h=1e-4 " << e4 << ", 1e-5 " << e5 << ", 1e-6 " << e6);
  CHECK(e5 < e4);
  CHECK(e5 < 3.0 * e6);
}

TEST_CASE("verification checks: posterior affinity and velocity consistency") {
  const CheckResult aff = check_posterior_affinity();
  INFO(aff.detail);
  CHECK(aff.pass);

  const CheckResult vel = check_velocity_consistency();
  INFO(vel.detail);
  CHECK(vel.pass);

  const CheckResult transport = check_discrete_transport();
  INFO(transport.detail);
  CHECK(transport.pass);
}
