#include "gpo/verify.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpo {

namespace {

constexpr double kPolicyFloor = 1e-10;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Euclidean projection onto { p >= floor, sum p = 1 }.
Eigen::VectorXd project_simplex(Eigen::VectorXd y, double floor) {
  const int n = static_cast<int>(y.size());
  Eigen::VectorXd z = y.array() - floor;
  double budget = 1.0 - n * floor;
  std::vector<double> u(z.data(), z.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, tau = 0.0;
  int rho = 0;
  for (int i = 0; i < n; ++i) {
    css += u[static_cast<size_t>(i)];
    double t = (css - budget) / (i + 1);
    if (u[static_cast<size_t>(i)] - t > 0) {
      rho = i + 1;
      tau = t;
    }
  }
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) p(i) = std::max(z(i) - tau, 0.0) + floor;
  return p;
}

}  // namespace

void TabularPomdp::validate() const {
  if (n_states < 1 || n_states > 8 || n_obs < 1 || n_obs > 8 || n_actions < 1 || n_actions > 8)
    throw std::invalid_argument("TabularPomdp: sizes must be in 1..8");
  if (static_cast<int>(transition.size()) != n_actions)
    throw std::invalid_argument("TabularPomdp: one transition matrix per action");
  for (const auto& p : transition) {
    if (p.rows() != n_states || p.cols() != n_states)
      throw std::invalid_argument("TabularPomdp: transition shape mismatch");
    for (int s = 0; s < n_states; ++s)
      if (std::abs(p.row(s).sum() - 1.0) > 1e-12)
        throw std::invalid_argument("TabularPomdp: transition rows must sum to 1");
  }
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw std::invalid_argument("TabularPomdp: reward shape mismatch");
  if (static_cast<int>(obs_of.size()) != n_states)
    throw std::invalid_argument("TabularPomdp: observation map size mismatch");
  for (int o : obs_of)
    if (o < 0 || o >= n_obs) throw std::invalid_argument("TabularPomdp: observation out of range");
  if (initial.size() != n_states || std::abs(initial.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("TabularPomdp: initial distribution must sum to 1");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("TabularPomdp: gamma must be in (0,1)");
}

PolicyTable floor_policy(PolicyTable p, double floor) {
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = p.row(i).array().max(floor);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

PolicyTable lift_policy(const TabularPomdp& m, const PolicyTable& obs_policy) {
  PolicyTable lifted(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s) lifted.row(s) = obs_policy.row(m.obs_of[static_cast<size_t>(s)]);
  return lifted;
}

ValueGrad exact_value_and_grad(const TabularPomdp& m, const PolicyTable& policy) {
  m.validate();
  if (policy.rows() != m.n_states || policy.cols() != m.n_actions)
    throw std::invalid_argument("exact_value_and_grad: policy shape mismatch");

  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(m.n_states, m.n_states);
  Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(m.n_states);
  for (int a = 0; a < m.n_actions; ++a) {
    p_pi += policy.col(a).asDiagonal() * m.transition[static_cast<size_t>(a)];
    r_pi += policy.col(a).cwiseProduct(m.reward.col(a));
  }

  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(m.n_states, m.n_states) - m.gamma * p_pi;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible())
    throw std::runtime_error("exact_value_and_grad: singular Bellman system");

  ValueGrad out;
  out.state_values = lu.solve(r_pi);
  out.value = m.initial.dot(out.state_values);

  Eigen::FullPivLU<Eigen::MatrixXd> lu_t(system.transpose());
  out.occupancy = (1.0 - m.gamma) * lu_t.solve(m.initial);

  out.q.resize(m.n_states, m.n_actions);
  for (int a = 0; a < m.n_actions; ++a)
    out.q.col(a) = m.reward.col(a) + m.gamma * m.transition[static_cast<size_t>(a)] * out.state_values;

  out.grad = (out.occupancy / (1.0 - m.gamma)).asDiagonal() * out.q;
  return out;
}

PolicyTable pmd_guider_step(const TabularPomdp& m, const PolicyTable& pi_lifted, double eta) {
  ValueGrad vg = exact_value_and_grad(m, pi_lifted);
  PolicyTable mu(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s) {
    if (vg.occupancy(s) <= 0.0) {
      mu.row(s) = pi_lifted.row(s);  // zero occupancy: objective is flat here
      continue;
    }
    // argmin { -eta <grad, mu> + (1/(1-gamma)) D(mu, pi) } per state reduces
    // to mu proportional to pi * exp(eta * Q) after the weights cancel. The
    // result is strictly positive by construction and deliberately unfloored.
    Eigen::ArrayXd logits = pi_lifted.row(s).array().log() + eta * vg.q.row(s).array();
    logits -= logits.maxCoeff();
    Eigen::ArrayXd e = logits.exp();
    mu.row(s) = (e / e.sum()).matrix().transpose();
  }
  return mu;
}

PolicyTable bregman_project(const TabularPomdp& m, const PolicyTable& mu_hat,
                            const Eigen::VectorXd& weights, const PolicyTable& prior_obs) {
  if (weights.size() != m.n_states)
    throw std::invalid_argument("bregman_project: weight size mismatch");
  PolicyTable pi(m.n_obs, m.n_actions);
  for (int o = 0; o < m.n_obs; ++o) {
    double total = 0.0;
    for (int s = 0; s < m.n_states; ++s)
      if (m.obs_of[static_cast<size_t>(s)] == o) total += weights(s);
    if (total <= 0.0) {
      pi.row(o) = prior_obs.row(o);  // unvisited observation, keep the prior
      continue;
    }
    Eigen::ArrayXd log_mix = Eigen::ArrayXd::Zero(m.n_actions);
    for (int s = 0; s < m.n_states; ++s) {
      if (m.obs_of[static_cast<size_t>(s)] != o) continue;
      log_mix += (weights(s) / total) * mu_hat.row(s).array().log();
    }
    log_mix -= log_mix.maxCoeff();
    Eigen::ArrayXd e = log_mix.exp();
    pi.row(o) = (e / e.sum()).matrix().transpose();
  }
  return floor_policy(std::move(pi), kPolicyFloor);
}

Eigen::VectorXd simplex_prox_oracle(const Eigen::VectorXd& linear, const Eigen::VectorXd& ref,
                                    double kl_weight, double tol) {
  const int n = static_cast<int>(linear.size());
  if (ref.size() != n || kl_weight <= 0.0)
    throw std::invalid_argument("simplex_prox_oracle: bad arguments");
  const double floor = 1e-13;
  Eigen::VectorXd log_ref = ref.array().max(floor).log();
  auto objective = [&](const Eigen::VectorXd& p) {
    return -linear.dot(p) + kl_weight * (p.array() * (p.array().log() - log_ref.array())).sum();
  };
  auto gradient = [&](const Eigen::VectorXd& p) {
    return (-linear.array() + kl_weight * (p.array().log() - log_ref.array() + 1.0)).matrix().eval();
  };

  auto mapped_norm = [&](const Eigen::VectorXd& p) {
    return (p - project_simplex(p - gradient(p), floor)).norm();
  };

  // Curvature of the KL term is kl_weight / p per coordinate, so steps above
  // p_min / kl_weight oscillate. Track that bound from the free coordinates.
  auto stable_step = [&](const Eigen::VectorXd& p) {
    double p_free = 1.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p(i) > 16.0 * floor) p_free = std::min(p_free, p(i));
    return p_free / kl_weight;
  };

  // Warm start at the prox center: the optimum is a small move away from it.
  Eigen::VectorXd p = project_simplex(ref, floor);
  double f = objective(p);
  double residual = mapped_norm(p);
  const int max_iters = 500000;
  int stalled = 0;
  for (int it = 0; it < max_iters && residual > tol; ++it) {
    Eigen::VectorXd g = gradient(p);
    // Armijo backoff along the projected-gradient arc, starting from the
    // largest stable step. Once the objective decrease falls below double
    // resolution, accept on a shrinking gradient-mapping norm instead; its
    // absolute scale keeps resolving progress all the way to the tolerance.
    double t = stable_step(p);
    bool moved = false;
    for (int back = 0; back < 60; ++back) {
      Eigen::VectorXd cand = project_simplex(p - t * g, floor);
      double decrease = g.dot(p - cand);
      double fc = objective(cand);
      bool value_ok = fc <= f - 1e-4 * decrease && fc < f;
      bool norm_ok = false;
      double cand_residual = 0.0;
      if (!value_ok && fc <= f + 1e-14 * (1.0 + std::abs(f))) {
        cand_residual = mapped_norm(cand);
        norm_ok = cand_residual <= 0.9 * residual;
      }
      if (value_ok || norm_ok) {
        p = std::move(cand);
        f = fc;
        residual = value_ok ? mapped_norm(p) : cand_residual;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) {
      // Endgame fallback: sweep a step grid and keep whatever shrinks the
      // gradient mapping; pure norm descent, so it terminates.
      double best_residual = residual;
      Eigen::VectorXd best = p;
      double best_f = f;
      for (int k = -40; k <= 12; ++k) {
        Eigen::VectorXd cand = project_simplex(p - std::ldexp(1.0, k) / kl_weight * g, floor);
        double cand_residual = mapped_norm(cand);
        if (cand_residual < best_residual) {
          best_residual = cand_residual;
          best = cand;
          best_f = objective(cand);
        }
      }
      if (best_residual <= 0.999 * residual) {
        p = std::move(best);
        f = best_f;
        residual = best_residual;
        stalled = 0;
        continue;
      }
      if (++stalled >= 3) break;  // numerical floor reached
    } else {
      stalled = 0;
    }
  }
  return p;
}

PolicyTable constrained_pmd_oracle(const TabularPomdp& m, const PolicyTable& pi_obs, double eta) {
  PolicyTable lifted = lift_policy(m, pi_obs);
  ValueGrad vg = exact_value_and_grad(m, lifted);
  PolicyTable next(m.n_obs, m.n_actions);
  for (int o = 0; o < m.n_obs; ++o) {
    Eigen::VectorXd linear = Eigen::VectorXd::Zero(m.n_actions);
    double weight = 0.0;
    for (int s = 0; s < m.n_states; ++s) {
      if (m.obs_of[static_cast<size_t>(s)] != o) continue;
      linear += eta * vg.grad.row(s).transpose();
      weight += vg.occupancy(s) / (1.0 - m.gamma);
    }
    if (weight <= 0.0) {
      next.row(o) = pi_obs.row(o);
      continue;
    }
    next.row(o) = simplex_prox_oracle(linear, pi_obs.row(o).transpose(), weight).transpose();
  }
  return floor_policy(std::move(next), kPolicyFloor);
}

double prop1_check(const TabularPomdp& m, const PolicyTable& pi0_obs, double eta, int n_iters) {
  m.validate();
  PolicyTable pi_a = floor_policy(pi0_obs, kPolicyFloor);
  PolicyTable pi_b = pi_a;
  double max_dev = 0.0;
  for (int k = 0; k < n_iters; ++k) {
    // Route A: guider mirror-descent step, then occupancy-weighted
    // projection, then backtracking onto the projected policy.
    PolicyTable lifted = lift_policy(m, pi_a);
    ValueGrad vg = exact_value_and_grad(m, lifted);
    PolicyTable mu_hat = pmd_guider_step(m, lifted, eta);
    pi_a = bregman_project(m, mu_hat, vg.occupancy, pi_a);

    // Route B: the constrained update solved directly by convex optimization.
    pi_b = constrained_pmd_oracle(m, pi_b, eta);

    max_dev = std::max(max_dev, (pi_a - pi_b).cwiseAbs().maxCoeff());
  }
  return max_dev;
}

TabularPomdp random_tabular_instance(Rng& rng, bool fully_observable) {
  TabularPomdp m;
  m.n_states = 3 + rng.uniform_int(4);  // 3..6
  m.n_actions = 2 + rng.uniform_int(2);
  m.n_obs = fully_observable ? m.n_states : m.n_states - 1;
  m.gamma = 0.8 + 0.1 * rng.uniform();

  m.obs_of.resize(static_cast<size_t>(m.n_states));
  if (fully_observable) {
    for (int s = 0; s < m.n_states; ++s) m.obs_of[static_cast<size_t>(s)] = s;
  } else {
    // surjective map with exactly one aliased pair
    for (int o = 0; o < m.n_obs; ++o) m.obs_of[static_cast<size_t>(o)] = o;
    m.obs_of[static_cast<size_t>(m.n_states - 1)] = rng.uniform_int(m.n_obs);
  }

  m.transition.resize(static_cast<size_t>(m.n_actions));
  for (auto& p : m.transition) {
    p.resize(m.n_states, m.n_states);
    for (int s = 0; s < m.n_states; ++s) {
      Eigen::VectorXd row(m.n_states);
      for (int s2 = 0; s2 < m.n_states; ++s2) row(s2) = 0.05 + rng.uniform();
      p.row(s) = row.transpose() / row.sum();
    }
  }
  // Modest reward spread keeps 50-step mirror-descent runs away from the
  // simplex boundary, where the Euclidean oracle conditions badly.
  m.reward.resize(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) m.reward(s, a) = 0.5 * rng.uniform() - 0.25;

  m.initial.resize(m.n_states);
  for (int s = 0; s < m.n_states; ++s) m.initial(s) = 0.2 + rng.uniform();
  m.initial /= m.initial.sum();
  return m;
}

TabularPomdp tigerdoor_alt_tabular() {
  // Two live states plus an absorbing terminal; both live states share one
  // observation. Terminal pays nothing.
  TabularPomdp m;
  m.n_states = 3;
  m.n_obs = 2;
  m.n_actions = 2;
  m.gamma = 0.5;
  m.obs_of = {0, 0, 1};
  m.transition.assign(2, Eigen::MatrixXd::Zero(3, 3));
  for (int a = 0; a < 2; ++a) {
    m.transition[static_cast<size_t>(a)](0, 2) = 1.0;
    m.transition[static_cast<size_t>(a)](1, 2) = 1.0;
    m.transition[static_cast<size_t>(a)](2, 2) = 1.0;
  }
  m.reward.resize(3, 2);
  m.reward << 2.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  m.initial.resize(3);
  m.initial << 0.5, 0.5, 0.0;
  return m;
}

DynamicsResult tigerdoor_alt_dynamics(int n_steps, double eta, double reward_left,
                                      double reward_right) {
  if (n_steps < 1 || eta <= 0.0) throw std::invalid_argument("tigerdoor_alt_dynamics: bad arguments");
  DynamicsResult out;
  double x = 0.5;
  out.pi_left.push_back(x);
  for (int t = 0; t < n_steps; ++t) {
    // Exponentiated guider step per state from the shared policy. The logit
    // move is eta * (Q(s, a_L) - Q(s, a_R)): +eta*reward_left in the left
    // state, -eta*reward_right in the right one.
    double l = logit(x);
    double x_left = sigmoid(l + eta * reward_left);
    double x_right = sigmoid(l - eta * reward_right);
    double p = x_left - x;   // movement toward a_L in the left state
    double q = x - x_right;  // movement toward a_R in the right state
    out.p_steps.push_back(p);
    out.q_steps.push_back(q);
    if (!(p > q)) out.p_always_above_q = false;
    // Exact minimizer of the imitation objective: the state-average row.
    double x_next = x + (p - q) / 2.0;
    if (!(x_next > x)) out.strictly_increasing = false;
    x = x_next;
    out.pi_left.push_back(x);
  }
  return out;
}

namespace {

// Synthetic minibatch with ratios kept away from the clip kinks so central
// differences are valid.
MinibatchData synthetic_minibatch(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                                  Algorithm algo, int n, Rng& rng) {
  MinibatchData mb;
  const int in = spec.input_dim;
  mb.guider_obs.resize(n, in);
  mb.learner_obs.resize(n, in);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < in; ++j) {
      mb.guider_obs(i, j) = rng.normal();
      mb.learner_obs(i, j) = rng.normal();
    }
    mb.guider_obs(i, in - 1) = 1.0;
    mb.learner_obs(i, in - 1) = 0.0;
  }
  const int adim = spec.head.kind == HeadSpec::kCategorical ? 1 : spec.head.n;
  mb.actions.resize(n, adim);
  mb.behavior_logprob.resize(n);
  mb.advantages.resize(n);
  mb.returns.resize(n);
  Role behavior = behavior_role(algo);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd input = behavior == Role::kGuider ? mb.guider_obs.row(i).transpose()
                                                      : mb.learner_obs.row(i).transpose();
    ActionDist d = policy_dist(spec, params, input);
    Eigen::VectorXd a = dist_sample(d, rng);
    mb.actions.row(i) = a.transpose();
    // jitter keeps every importance ratio strictly inside or outside a clip
    mb.behavior_logprob(i) = dist_logprob(d, a) + 0.08 * (rng.uniform() - 0.5);
    double adv = rng.normal();
    if (std::abs(adv) < 0.1) adv = adv < 0 ? -0.1 : 0.1;
    mb.advantages(i) = adv;
    mb.returns(i) = rng.normal();
  }
  return mb;
}

// The losses are piecewise-smooth; central differences are only meaningful
// when no importance ratio sits within `margin` of a clip boundary.
bool clear_of_kinks(const PolicyNetSpec& spec, const Eigen::VectorXd& params, Algorithm algo,
                    const MinibatchData& mb, const LossOptions& opt, double margin) {
  ad::Tape tape;
  BoundNet net(tape, spec, params);
  PolicyForward fwd = forward_minibatch(tape, net, algo, mb);
  Eigen::VectorXd lpi = tape.value(batch_logprob(tape, fwd.pi, mb.actions)).col(0);
  auto away = [margin](double x, double b) { return std::abs(x - b) > margin; };
  const double lo = 1.0 - opt.clip_eps, hi = 1.0 + opt.clip_eps;
  double ilo = opt.inner_form == InnerClipForm::kDelta ? 1.0 - opt.inner_delta
                                                       : 1.0 / opt.inner_rho;
  double ihi = opt.inner_form == InnerClipForm::kDelta ? 1.0 + opt.inner_delta : opt.inner_rho;
  Eigen::VectorXd lmu;
  if (fwd.has_mu) lmu = tape.value(batch_logprob(tape, fwd.mu, mb.actions)).col(0);
  for (Eigen::Index i = 0; i < lpi.size(); ++i) {
    double r_pi = std::exp(lpi(i) - mb.behavior_logprob(i));
    if (!away(r_pi, lo) || !away(r_pi, hi)) return false;
    if (!fwd.has_mu) continue;
    double r_mu = std::exp(lmu(i) - mb.behavior_logprob(i));
    if (!away(r_mu, lo) || !away(r_mu, hi)) return false;
    if (algo == Algorithm::kGpoClip) {
      double inner = std::exp(lmu(i) - lpi(i));
      if (!away(inner, ilo) || !away(inner, ihi)) return false;
      double product = std::min(std::max(inner, ilo), ihi) * std::exp(lpi(i) - mb.behavior_logprob(i));
      if (!away(product, lo) || !away(product, hi)) return false;
    }
  }
  return true;
}

}  // namespace

double gradient_check_once(Algorithm algo, uint64_t seed, double fd_step) {
  Rng rng(derive_seed(seed, 0x6664));
  PolicyNetSpec spec;
  spec.input_dim = 5;
  spec.encoder = {8};
  spec.action_decoder = {8};
  spec.value_decoder = {8};
  spec.activation = Activation::kTanh;  // smooth activation for clean differences
  spec.head = (seed % 2 == 0) ? HeadSpec{HeadSpec::kCategorical, 3}
                              : HeadSpec{HeadSpec::kDiagGaussian, 2};
  spec.aux_head = needs_aux_head(algo);

  Eigen::VectorXd params = init_params(spec, rng);
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) += 0.05 * rng.normal();

  LossOptions opt;
  opt.clip_eps = 0.2;
  opt.inner_form = InnerClipForm::kDelta;
  opt.inner_delta = 0.15;
  opt.alpha = 0.7;
  opt.entropy_coef = 0.01;
  opt.value_coef = 0.9;

  MinibatchData mb = synthetic_minibatch(spec, params, algo, 16, rng);
  for (int attempt = 0; attempt < 50 && !clear_of_kinks(spec, params, algo, mb, opt, 1e-3);
       ++attempt)
    mb = synthetic_minibatch(spec, params, algo, 16, rng);
  FrozenForward frozen = capture_frozen(spec, params, algo, mb);

  auto loss_at = [&](const Eigen::VectorXd& p) {
    ad::Tape tape;
    BoundNet net(tape, spec, p);
    PolicyForward fwd = forward_minibatch_with_frozen(tape, net, algo, mb, frozen);
    return build_loss(tape, algo, fwd, mb, opt);
  };

  Eigen::VectorXd grad;
  {
    ad::Tape tape;
    BoundNet net(tape, spec, params);
    PolicyForward fwd = forward_minibatch_with_frozen(tape, net, algo, mb, frozen);
    LossResult loss = build_loss(tape, algo, fwd, mb, opt);
    tape.backward(loss.total);
    grad = net.grad();
  }

  double worst = 0.0;
  Eigen::VectorXd p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p(i) = params(i) + fd_step;
    double up = loss_at(p).parts.total;
    p(i) = params(i) - fd_step;
    double down = loss_at(p).parts.total;
    p(i) = params(i);
    double fd = (up - down) / (2.0 * fd_step);
    double err = std::abs(fd - grad(i)) / std::max({1.0, std::abs(fd), std::abs(grad(i))});
    worst = std::max(worst, err);
  }
  return worst;
}

Prop2Result prop2_check(const std::vector<TrainRecord>& records, double eps, double d,
                        double slack) {
  Prop2Result out;
  out.bound = eps + std::sqrt(2.0 * d) + slack;
  out.n_iterations = static_cast<int>(records.size());
  for (const auto& r : records) {
    out.max_gap = std::max(out.max_gap, r.rho_pi_gap);
    if (r.rho_pi_gap > out.bound) ++out.violations;
  }
  out.violation_rate =
      records.empty() ? 0.0 : static_cast<double>(out.violations) / records.size();
  return out;
}

}  // namespace gpo
