#include "gpo/rollout.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gpo {

namespace {

void check_finite(const Eigen::VectorXd& v, double reward, int env, int step) {
  if (v.allFinite() && std::isfinite(reward)) return;
  throw std::runtime_error("collect: non-finite observation or reward from env " +
                           std::to_string(env) + " at step " + std::to_string(step));
}

}  // namespace

Batch collect(EnvPool& pool, const PolicyNetSpec& spec, const Eigen::VectorXd& params,
              int n_steps, const CollectOptions& options) {
  const PomdpSpec& env_spec = pool.spec();
  const int n_envs = pool.size();
  const int n = n_envs * n_steps;
  const int action_dim = env_spec.action_space.kind == ActionSpace::kDiscrete
                             ? 1
                             : env_spec.action_space.n;
  const int input_dim = env_spec.state_dim + env_spec.obs_dim + 1;
  if (input_dim != spec.input_dim)
    throw std::invalid_argument("collect: net input dim does not match environment");

  Batch batch;
  batch.n_envs = n_envs;
  batch.n_steps = n_steps;
  batch.guider_obs.resize(n, input_dim);
  batch.learner_obs.resize(n, input_dim);
  batch.actions.resize(n, action_dim);
  batch.rewards.resize(n);
  batch.dones.resize(n);
  batch.behavior_logprob.resize(n);
  batch.values.resize(n);
  batch.advantages = Eigen::VectorXd::Zero(n);
  batch.returns = Eigen::VectorXd::Zero(n);
  batch.bootstrap_values.resize(n_envs);

  std::vector<Eigen::VectorXd> cur_g(static_cast<size_t>(n_envs));
  std::vector<Eigen::VectorXd> cur_l(static_cast<size_t>(n_envs));
  std::vector<double> acc_return(static_cast<size_t>(n_envs), 0.0);

  for (int e = 0; e < n_envs; ++e) {
    StepResult r = pool.env(e).reset(pool.rng(e));
    check_finite(r.obs, r.reward, e, -1);
    cur_g[static_cast<size_t>(e)] = guider_input(r.state, r.obs);
    cur_l[static_cast<size_t>(e)] = learner_input(env_spec.state_dim, r.obs);
  }

  for (int e = 0; e < n_envs; ++e) {
    for (int t = 0; t < n_steps; ++t) {
      const int row = batch.index(e, t);
      const Eigen::VectorXd& og = cur_g[static_cast<size_t>(e)];
      const Eigen::VectorXd& ol = cur_l[static_cast<size_t>(e)];
      batch.guider_obs.row(row) = og.transpose();
      batch.learner_obs.row(row) = ol.transpose();

      Eigen::VectorXd action;
      double logp = 0.0;
      if (options.mix_lambda >= 0.0) {
        ActionDist mu = policy_dist(spec, params, og);
        ActionDist pi = policy_dist(spec, params, ol);
        bool act_guider = pool.rng(e).uniform() < options.mix_lambda;
        action = dist_sample(act_guider ? mu : pi, pool.rng(e));
        double lam = options.mix_lambda;
        logp = std::log(lam * std::exp(dist_logprob(mu, action)) +
                        (1.0 - lam) * std::exp(dist_logprob(pi, action)));
      } else {
        ActionDist d = policy_dist(spec, params, options.behavior == Role::kGuider ? og : ol);
        action = dist_sample(d, pool.rng(e));
        logp = dist_logprob(d, action);
      }
      batch.actions.row(row) = action.transpose();
      batch.behavior_logprob(row) = logp;
      batch.values(row) =
          value_estimate(spec, params, options.value_input == Role::kGuider ? og : ol);

      StepResult r = pool.env(e).step(action, pool.rng(e));
      check_finite(r.obs, r.reward, e, t);
      batch.rewards(row) = r.reward;
      batch.dones(row) = r.done ? 1.0 : 0.0;
      acc_return[static_cast<size_t>(e)] += r.reward;
      if (r.done) {
        batch.episode_returns.push_back(acc_return[static_cast<size_t>(e)]);
        acc_return[static_cast<size_t>(e)] = 0.0;
        r = pool.env(e).reset(pool.rng(e));
        check_finite(r.obs, r.reward, e, t);
      }
      cur_g[static_cast<size_t>(e)] = guider_input(r.state, r.obs);
      cur_l[static_cast<size_t>(e)] = learner_input(env_spec.state_dim, r.obs);
    }
    batch.bootstrap_values(e) = value_estimate(
        spec, params,
        options.value_input == Role::kGuider ? cur_g[static_cast<size_t>(e)]
                                             : cur_l[static_cast<size_t>(e)]);
  }
  return batch;
}

Eigen::VectorXd reward_to_go(const Eigen::VectorXd& rewards, const Eigen::VectorXd& dones,
                             double gamma, const Eigen::VectorXd& bootstrap_values,
                             int n_envs, int n_steps) {
  if (rewards.size() != n_envs * n_steps || dones.size() != rewards.size())
    throw std::invalid_argument("reward_to_go: shape mismatch");
  Eigen::VectorXd out(rewards.size());
  for (int e = 0; e < n_envs; ++e) {
    double next = bootstrap_values(e);
    for (int t = n_steps - 1; t >= 0; --t) {
      const int row = e * n_steps + t;
      next = rewards(row) + gamma * next * (1.0 - dones(row));
      out(row) = next;
    }
  }
  return out;
}

Eigen::VectorXd gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                    const Eigen::VectorXd& dones, double gamma, double lambda,
                    const Eigen::VectorXd& bootstrap_values, int n_envs, int n_steps) {
  if (rewards.size() != n_envs * n_steps || values.size() != rewards.size() ||
      dones.size() != rewards.size())
    throw std::invalid_argument("gae: shape mismatch");
  Eigen::VectorXd adv(rewards.size());
  for (int e = 0; e < n_envs; ++e) {
    double last = 0.0;
    double next_value = bootstrap_values(e);
    for (int t = n_steps - 1; t >= 0; --t) {
      const int row = e * n_steps + t;
      double nonterminal = 1.0 - dones(row);
      double delta = rewards(row) + gamma * next_value * nonterminal - values(row);
      last = delta + gamma * lambda * nonterminal * last;
      adv(row) = last;
      next_value = values(row);
    }
  }
  return adv;
}

void normalize_advantages(Eigen::VectorXd& advantages) {
  const double n = static_cast<double>(advantages.size());
  double mean = advantages.mean();
  double var = (advantages.array() - mean).square().sum() / n;
  advantages = (advantages.array() - mean) / (std::sqrt(var) + 1e-8);
}

std::vector<std::vector<int>> minibatch_plan(int batch_size, int n_minibatches, int n_epochs,
                                            Rng& rng) {
  if (batch_size < 1 || n_minibatches < 1 || n_epochs < 0)
    throw std::invalid_argument("minibatch_plan: bad sizes");
  const int mb_size = batch_size / n_minibatches;
  if (mb_size < 1) throw std::invalid_argument("minibatch_plan: more minibatches than samples");
  const int retained = mb_size * n_minibatches;

  std::vector<int> order(static_cast<size_t>(batch_size));
  std::vector<std::vector<int>> plan;
  plan.reserve(static_cast<size_t>(n_epochs * n_minibatches));
  for (int epoch = 0; epoch < n_epochs; ++epoch) {
    for (int i = 0; i < batch_size; ++i) order[static_cast<size_t>(i)] = i;
    // Fisher-Yates with the pool's deterministic rng
    for (int i = batch_size - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    for (int m = 0; m < n_minibatches; ++m) {
      plan.emplace_back(order.begin() + m * mb_size, order.begin() + (m + 1) * mb_size);
    }
    (void)retained;
  }
  return plan;
}

}  // namespace gpo
