#pragma once

#include <Eigen/Core>
#include <vector>

#include "gpo/rng.hpp"
#include "gpo/trainer.hpp"

namespace gpo {

/// Small exactly-solvable POMDP: dense transition tensor, reward table, a
/// deterministic observation map, and an initial distribution. Sizes stay
/// small enough for direct linear solves.
struct TabularPomdp {
  int n_states = 0;
  int n_obs = 0;
  int n_actions = 0;
  std::vector<Eigen::MatrixXd> transition;  // per action, row s -> s'
  Eigen::MatrixXd reward;                   // n_states x n_actions
  std::vector<int> obs_of;                  // deterministic observation map
  Eigen::VectorXd initial;
  double gamma = 0.9;

  void validate() const;
};

// Policy tables: one row per state (guider) or per observation (learner),
// rows on the simplex with a 1e-10 positivity floor.
using PolicyTable = Eigen::MatrixXd;

PolicyTable floor_policy(PolicyTable p, double floor = 1e-10);
// Lifts an observation policy to a state policy through the observation map.
PolicyTable lift_policy(const TabularPomdp& m, const PolicyTable& obs_policy);

struct ValueGrad {
  double value = 0.0;          // initial-distribution value
  Eigen::VectorXd state_values;
  Eigen::MatrixXd q;           // n_states x n_actions
  Eigen::VectorXd occupancy;   // normalized discounted state occupancy
  Eigen::MatrixXd grad;        // dV/dpi(a|s) = occupancy(s) * q(s,a) / (1-gamma)
};

// Exact policy evaluation by linear solve plus the policy-gradient identity.
ValueGrad exact_value_and_grad(const TabularPomdp& m, const PolicyTable& state_policy);

// One mirror-descent step for the guider: per state,
// mu(a|s) proportional to pi(a|s) * exp(eta * Q(s,a)). States with zero
// occupancy keep the prior row.
PolicyTable pmd_guider_step(const TabularPomdp& m, const PolicyTable& pi_lifted, double eta);

// Occupancy-weighted Bregman projection onto observation-constant policies:
// log pi(a|o) proportional to the weighted average of log mu(a|s) over the
// states mapping to o. Observations with zero weight keep the prior policy.
PolicyTable bregman_project(const TabularPomdp& m, const PolicyTable& mu_hat,
                            const Eigen::VectorXd& weights, const PolicyTable& prior_obs);

// Convex-solver oracle: per-row minimization of
//   -<linear, p> + kl_weight * KL(p || ref)
// over the simplex by projected gradient with Armijo backoff.
Eigen::VectorXd simplex_prox_oracle(const Eigen::VectorXd& linear, const Eigen::VectorXd& ref,
                                    double kl_weight, double tol = 1e-12);

// Direct constrained mirror-descent step over observation-constant policies,
// solved by the convex oracle (no closed forms).
PolicyTable constrained_pmd_oracle(const TabularPomdp& m, const PolicyTable& pi_obs, double eta);

/// Runs the two routes side by side for n_iters steps: the guider update
/// followed by projection and backtracking, against the direct constrained
/// update computed by convex optimization. Returns the largest elementwise
/// policy deviation seen.
double prop1_check(const TabularPomdp& m, const PolicyTable& pi0_obs, double eta, int n_iters);

// Random instances for the oracle sweep. Aliased instances have at least two
// states sharing an observation.
TabularPomdp random_tabular_instance(Rng& rng, bool fully_observable);
TabularPomdp tigerdoor_alt_tabular();

struct DynamicsResult {
  std::vector<double> pi_left;     // trajectory of pi_t(a_L), including start
  std::vector<double> p_steps, q_steps;
  bool p_always_above_q = true;
  bool strictly_increasing = true;
};

/// One-step TigerDoor-alt co-training recursion with exact gradients: the
/// guider takes an exponentiated step per state from the shared policy, the
/// learner takes the exact minimizer of the imitation objective (the state
/// average), which moves by (p - q)/2 per step.
DynamicsResult tigerdoor_alt_dynamics(int n_steps, double eta, double reward_left = 2.0,
                                      double reward_right = 1.0);

struct Prop2Result {
  double bound = 0.0;
  int n_iterations = 0;
  int violations = 0;
  double violation_rate = 0.0;
  double max_gap = 0.0;
};

// Checks the recorded first-epoch mean |1 - rho^pi| of a training run
// against eps + sqrt(2 d) + slack.
Prop2Result prop2_check(const std::vector<TrainRecord>& records, double eps, double d,
                        double slack = 0.05);

/// Central finite-difference check of one merged objective on a small random
/// net and synthetic batch (the stop-gradient slots are held at the base
/// parameters on both sides of the comparison). Returns the worst relative
/// gradient error over all parameters; batches are drawn clear of the clip
/// boundaries where the losses are not differentiable. Seeds alternate
/// between categorical and Gaussian heads.
double gradient_check_once(Algorithm algo, uint64_t seed, double fd_step = 1e-5);

}  // namespace gpo
