#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gpo/verify.hpp"

using namespace gpo;

namespace {

TabularPomdp single_state_chain() {
  TabularPomdp m;
  m.n_states = 1;
  m.n_obs = 1;
  m.n_actions = 1;
  m.gamma = 0.5;
  m.transition = {Eigen::MatrixXd::Ones(1, 1)};
  m.reward = Eigen::MatrixXd::Ones(1, 1);
  m.obs_of = {0};
  m.initial = Eigen::VectorXd::Ones(1);
  return m;
}

PolicyTable uniform_policy(int rows, int cols) {
  return floor_policy(PolicyTable::Constant(rows, cols, 1.0));
}

}  // namespace

TEST_CASE("single state, single action, r = 1, gamma = 0.5 gives V = 2") {
  TabularPomdp m = single_state_chain();
  ValueGrad vg = exact_value_and_grad(m, uniform_policy(1, 1));
  CHECK(vg.value == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(vg.occupancy(0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("uniform policy on a symmetric two-state instance has equal values") {
  TabularPomdp m;
  m.n_states = 2;
  m.n_obs = 2;
  m.n_actions = 2;
  m.gamma = 0.9;
  Eigen::MatrixXd swap(2, 2), stay(2, 2);
  swap << 0, 1, 1, 0;
  stay << 1, 0, 0, 1;
  m.transition = {swap, stay};
  m.reward.resize(2, 2);
  m.reward << 1.0, -0.5, 1.0, -0.5;
  m.obs_of = {0, 1};
  m.initial = Eigen::VectorXd::Constant(2, 0.5);
  ValueGrad vg = exact_value_and_grad(m, uniform_policy(2, 2));
  CHECK(vg.state_values(0) == doctest::Approx(vg.state_values(1)).epsilon(1e-12));
}

TEST_CASE("exact gradient passes projected finite differences") {
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    TabularPomdp m = random_tabular_instance(rng, trial % 2 == 0);
    PolicyTable base(m.n_states, m.n_actions);
    for (int s = 0; s < m.n_states; ++s) {
      for (int a = 0; a < m.n_actions; ++a) base(s, a) = 0.2 + rng.uniform();
      base.row(s) /= base.row(s).sum();
    }
    ValueGrad vg = exact_value_and_grad(m, base);
    const double h = 1e-6;
    for (int s = 0; s < m.n_states; ++s) {
      // zero-sum direction within the simplex tangent space
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(m.n_actions);
      dir(0) = 1.0;
      dir(m.n_actions - 1) = -1.0;
      PolicyTable up = base, down = base;
      up.row(s) += h * dir.transpose();
      down.row(s) -= h * dir.transpose();
      double fd = (exact_value_and_grad(m, up).value - exact_value_and_grad(m, down).value) /
                  (2.0 * h);
      double analytic = vg.grad.row(s).dot(dir);
      CHECK(std::abs(fd - analytic) < 1e-6);
    }
  }
}

TEST_CASE("gamma = 1 without termination is rejected") {
  // For a stochastic transition matrix and gamma < 1 the Bellman system is
  // always invertible, so the undiscounted non-terminating case is the
  // singular one; it is rejected at validation.
  TabularPomdp m = single_state_chain();
  m.gamma = 1.0;
  CHECK_THROWS_AS(exact_value_and_grad(m, uniform_policy(1, 1)), std::invalid_argument);
}

TEST_CASE("pmd guider step: eta = 0 and zero-reward instances are fixed points") {
  Rng rng(62);
  TabularPomdp m = random_tabular_instance(rng, false);
  PolicyTable pi = lift_policy(m, uniform_policy(m.n_obs, m.n_actions));

  PolicyTable stay = pmd_guider_step(m, pi, 0.0);
  CHECK((stay - pi).cwiseAbs().maxCoeff() < 1e-12);

  TabularPomdp zero = m;
  zero.reward.setZero();
  PolicyTable stay2 = pmd_guider_step(zero, pi, 0.3);
  CHECK((stay2 - pi).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pmd guider step agrees with the convex-solver oracle") {
  Rng rng(63);
  for (int trial = 0; trial < 5; ++trial) {
    TabularPomdp m = random_tabular_instance(rng, false);
    PolicyTable pi = lift_policy(m, uniform_policy(m.n_obs, m.n_actions));
    double eta = 0.2;
    PolicyTable closed = pmd_guider_step(m, pi, eta);
    ValueGrad vg = exact_value_and_grad(m, pi);
    for (int s = 0; s < m.n_states; ++s) {
      if (vg.occupancy(s) <= 0.0) continue;
      Eigen::VectorXd linear = eta * vg.grad.row(s).transpose();
      double weight = vg.occupancy(s) / (1.0 - m.gamma);
      Eigen::VectorXd oracle = simplex_prox_oracle(linear, pi.row(s).transpose(), weight);
      CHECK((closed.row(s).transpose() - oracle).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("bregman projection") {
  Rng rng(64);
  TabularPomdp m = random_tabular_instance(rng, true);  // injective observation map

  SUBCASE("fully observable projection is the identity") {
    PolicyTable mu(m.n_states, m.n_actions);
    for (int s = 0; s < m.n_states; ++s) {
      for (int a = 0; a < m.n_actions; ++a) mu(s, a) = 0.1 + rng.uniform();
      mu.row(s) /= mu.row(s).sum();
    }
    Eigen::VectorXd w = Eigen::VectorXd::Constant(m.n_states, 1.0 / m.n_states);
    PolicyTable projected = bregman_project(m, mu, w, uniform_policy(m.n_obs, m.n_actions));
    CHECK((projected - mu).cwiseAbs().maxCoeff() < 1e-9);
  }

  SUBCASE("two equal-weight states blend to the normalized geometric mean") {
    TabularPomdp two;
    two.n_states = 2;
    two.n_obs = 1;
    two.n_actions = 2;
    two.gamma = 0.5;
    two.transition = {Eigen::MatrixXd::Constant(2, 2, 0.5), Eigen::MatrixXd::Constant(2, 2, 0.5)};
    two.reward = Eigen::MatrixXd::Zero(2, 2);
    two.obs_of = {0, 0};
    two.initial = Eigen::VectorXd::Constant(2, 0.5);
    PolicyTable mu(2, 2);
    mu << 0.8, 0.2, 0.2, 0.8;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(2, 0.5);
    PolicyTable projected = bregman_project(two, mu, w, uniform_policy(1, 2));
    CHECK(projected(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(projected(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("aliased projection matches direct convex minimization") {
    TabularPomdp aliased = random_tabular_instance(rng, false);
    PolicyTable mu(aliased.n_states, aliased.n_actions);
    for (int s = 0; s < aliased.n_states; ++s) {
      for (int a = 0; a < aliased.n_actions; ++a) mu(s, a) = 0.1 + rng.uniform();
      mu.row(s) /= mu.row(s).sum();
    }
    Eigen::VectorXd w(aliased.n_states);
    for (int s = 0; s < aliased.n_states; ++s) w(s) = 0.1 + rng.uniform();
    w /= w.sum();
    PolicyTable projected =
        bregman_project(aliased, mu, w, uniform_policy(aliased.n_obs, aliased.n_actions));
    // oracle: minimize sum_s w_s KL(p || mu_s) = const + KL-prox with the
    // weighted-average log as the linear term
    for (int o = 0; o < aliased.n_obs; ++o) {
      double total = 0.0;
      Eigen::VectorXd linear = Eigen::VectorXd::Zero(aliased.n_actions);
      for (int s = 0; s < aliased.n_states; ++s) {
        if (aliased.obs_of[static_cast<size_t>(s)] != o) continue;
        total += w(s);
        linear += w(s) * mu.row(s).transpose().array().log().matrix();
      }
      if (total <= 0.0) continue;
      // The projection objective is -<linear, p> + total * sum p log p up to
      // a constant, i.e. the prox with a uniform reference.
      Eigen::VectorXd ref = Eigen::VectorXd::Constant(aliased.n_actions, 1.0 / aliased.n_actions);
      Eigen::VectorXd oracle = simplex_prox_oracle(linear, ref, total);
      CHECK((projected.row(o).transpose() - oracle).cwiseAbs().maxCoeff() < 1e-8);
    }
  }

  SUBCASE("zero-occupancy observations keep the prior") {
    TabularPomdp two;
    two.n_states = 2;
    two.n_obs = 2;
    two.n_actions = 2;
    two.gamma = 0.5;
    two.transition = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
    two.reward = Eigen::MatrixXd::Zero(2, 2);
    two.obs_of = {0, 1};
    two.initial.resize(2);
    two.initial << 1.0, 0.0;  // state 1 (obs 1) unreachable
    PolicyTable mu(2, 2);
    mu << 0.9, 0.1, 0.3, 0.7;
    Eigen::VectorXd w(2);
    w << 1.0, 0.0;
    PolicyTable prior(2, 2);
    prior << 0.5, 0.5, 0.25, 0.75;
    PolicyTable projected = bregman_project(two, mu, w, prior);
    CHECK(projected(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("prop1: routes coincide") {
  Rng rng(65);
  SUBCASE("fully observable routes coincide to 1e-10") {
    for (int trial = 0; trial < 3; ++trial) {
      TabularPomdp m = random_tabular_instance(rng, true);
      double dev = prop1_check(m, uniform_policy(m.n_obs, m.n_actions), 0.1, 20);
      CHECK(dev < 1e-10);
    }
  }
  SUBCASE("aliased routes coincide to 1e-6") {
    for (int trial = 0; trial < 3; ++trial) {
      TabularPomdp m = random_tabular_instance(rng, false);
      double dev = prop1_check(m, uniform_policy(m.n_obs, m.n_actions), 0.1, 50);
      CHECK(dev < 1e-6);
    }
  }
  SUBCASE("tigerdoor-alt tabular instance converges to always-left, value 1") {
    TabularPomdp m = tigerdoor_alt_tabular();
    PolicyTable pi = uniform_policy(m.n_obs, m.n_actions);
    double dev = prop1_check(m, pi, 0.5, 200);
    CHECK(dev < 1e-6);
    // run route A to convergence and inspect the fixed point
    for (int k = 0; k < 400; ++k) {
      PolicyTable lifted = lift_policy(m, pi);
      ValueGrad vg = exact_value_and_grad(m, lifted);
      PolicyTable mu_hat = pmd_guider_step(m, lifted, 0.5);
      pi = bregman_project(m, mu_hat, vg.occupancy, pi);
    }
    CHECK(pi(0, 0) > 0.999);  // the aliased observation plays left
    ValueGrad final_vg = exact_value_and_grad(m, lift_policy(m, pi));
    CHECK(final_vg.value == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("tigerdoor-alt dynamics") {
  SUBCASE("one step from uniform moves toward the left door") {
    DynamicsResult r = tigerdoor_alt_dynamics(1, 0.05);
    CHECK(r.pi_left.back() > 0.5);
    CHECK(r.p_always_above_q);
  }
  SUBCASE("1000 steps at eta = 0.05 exceed 0.99") {
    DynamicsResult r = tigerdoor_alt_dynamics(1000, 0.05);
    CHECK(r.pi_left.back() > 0.99);
    CHECK(r.p_always_above_q);
    CHECK(r.strictly_increasing);
  }
  SUBCASE("equal rewards are stationary at uniform") {
    DynamicsResult r = tigerdoor_alt_dynamics(100, 0.05, 1.0, 1.0);
    for (double x : r.pi_left) CHECK(x == doctest::Approx(0.5).epsilon(1e-12));
    for (size_t i = 0; i < r.p_steps.size(); ++i)
      CHECK(r.p_steps[i] == doctest::Approx(r.q_steps[i]).epsilon(1e-12));
  }
}

TEST_CASE("prop2 arithmetic") {
  SUBCASE("a fresh run with matching policies satisfies the bound") {
    std::vector<TrainRecord> records(1);
    records[0].rho_pi_gap = 0.0;
    Prop2Result r = prop2_check(records, 0.2, 0.001);
    CHECK(r.violations == 0);
    CHECK(r.bound == doctest::Approx(0.2 + std::sqrt(0.002) + 0.05));
  }
  SUBCASE("pinsker keeps a KL-1 gap within the d = 1 bound") {
    // categorical pair with KL(pi || mu) = 1 and mu = beta: the measured gap
    // is 2 TV <= 2 sqrt(KL/2) = sqrt(2) <= eps + sqrt(2) + slack
    Eigen::VectorXd mu_p = Eigen::VectorXd::Constant(2, 0.5);
    double lo = 1e-6, hi = 0.5;
    auto kl_of = [&](double p) {
      return p * std::log(p / 0.5) + (1 - p) * std::log((1 - p) / 0.5);
    };
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      (kl_of(mid) > 1.0 ? lo : hi) = mid;
    }
    double p = 0.5 * (lo + hi);
    double gap = std::abs(p - 0.5) + std::abs((1 - p) - 0.5);  // E_beta |1 - rho|
    std::vector<TrainRecord> records(1);
    records[0].rho_pi_gap = gap;
    Prop2Result r = prop2_check(records, 0.2, 1.0);
    CHECK(r.violations == 0);
  }
}

TEST_CASE("tabular validation rejects malformed instances") {
  TabularPomdp m = single_state_chain();
  m.transition[0](0, 0) = 0.9;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  TabularPomdp g = single_state_chain();
  g.gamma = 1.0;
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("gradient suite detects a corrupted estimator") {
  // the direct-sum oracle must flag a sign error in a GAE-like recursion
  Eigen::VectorXd r(4), v(4), d(4), boot(1);
  r << 1, -1, 0.5, 2;
  v << 0.2, 0.1, -0.3, 0.4;
  d << 0, 0, 0, 1;
  boot << 0.0;
  Eigen::VectorXd good = gae(r, v, d, 0.9, 0.8, boot, 1, 4);
  Eigen::VectorXd corrupted = -good;  // injected sign error
  double deviation = 0.0;
  for (int t = 0; t < 4; ++t) {
    double acc = 0.0, w = 1.0;
    for (int l = 0; t + l < 4; ++l) {
      double next_v = t + l + 1 < 4 ? v(t + l + 1) : boot(0);
      double delta = r(t + l) + 0.9 * next_v * (1.0 - d(t + l)) - v(t + l);
      acc += w * delta;
      if (d(t + l) == 1.0) break;
      w *= 0.9 * 0.8;
    }
    deviation = std::max(deviation, std::abs(corrupted(t) - acc));
  }
  CHECK(deviation > 0.1);  // the oracle catches the mutation
}
