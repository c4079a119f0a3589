#pragma once

#include <Eigen/Core>
#include <vector>

#include "gpo/envs.hpp"
#include "gpo/net.hpp"

namespace gpo {

/// Rollout storage, one row per transition, ordered by (env index, step
/// index). Behavior log-probabilities are recorded at collection time from
/// the exact distribution that sampled the action; advantages and return
/// targets are filled before any policy update.
struct Batch {
  int n_envs = 0;
  int n_steps = 0;
  Eigen::MatrixXd guider_obs;   // n x (state_dim + obs_dim + 1)
  Eigen::MatrixXd learner_obs;  // same layout, privileged block zeroed
  Eigen::MatrixXd actions;      // n x action_dim (discrete: index in col 0)
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;  // 0/1
  Eigen::VectorXd behavior_logprob;
  Eigen::VectorXd values;            // value head estimates at collection
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;           // reward-to-go targets
  Eigen::VectorXd bootstrap_values;  // per env, value of the state after the window

  std::vector<double> episode_returns;  // undiscounted, episodes completed in the window

  int size() const { return n_envs * n_steps; }
  int index(int env, int step) const { return env * n_steps + step; }
};

enum class Role { kGuider, kLearner };

struct CollectOptions {
  Role behavior = Role::kGuider;
  Role value_input = Role::kGuider;
  // Mixture behavior policy: probability of acting with the guider instead
  // of the learner. Negative = pure `behavior` role.
  double mix_lambda = -1.0;
};

/// Runs the behavior policy for n_steps in every pool instance, auto-resets
/// finished episodes, and records both guider and learner views of every
/// transition. Aborts with the env index and step if an observation or
/// reward is non-finite.
Batch collect(EnvPool& pool, const PolicyNetSpec& spec, const Eigen::VectorXd& params,
              int n_steps, const CollectOptions& options);

// Discounted reward-to-go per env block; truncated tails bootstrap with the
// stored final value.
Eigen::VectorXd reward_to_go(const Eigen::VectorXd& rewards, const Eigen::VectorXd& dones,
                             double gamma, const Eigen::VectorXd& bootstrap_values,
                             int n_envs, int n_steps);

// Generalized advantage estimation by backward recursion.
Eigen::VectorXd gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                    const Eigen::VectorXd& dones, double gamma, double lambda,
                    const Eigen::VectorXd& bootstrap_values, int n_envs, int n_steps);

// In-place per-batch normalization to mean 0 / std 1.
void normalize_advantages(Eigen::VectorXd& advantages);

/// Index sets for n_epochs passes of n_minibatches each: every epoch is a
/// fresh uniform shuffle, every retained index appears exactly once per
/// epoch. When the batch is not divisible the remainder is dropped.
std::vector<std::vector<int>> minibatch_plan(int batch_size, int n_minibatches, int n_epochs,
                                             Rng& rng);

}  // namespace gpo
