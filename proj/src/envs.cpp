#include "gpo/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace gpo {

namespace {

int discrete_action(const Eigen::VectorXd& a, int n) {
  if (a.size() != 1) throw std::invalid_argument("discrete action must have one entry");
  int idx = static_cast<int>(std::llround(a(0)));
  if (idx < 0 || idx >= n) throw std::invalid_argument("invalid action index " + std::to_string(idx));
  return idx;
}

Eigen::VectorXd one_hot(int n, int i) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v(i) = 1.0;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// TigerDoor

TigerDoorEnv::TigerDoorEnv() {
  spec_.state_dim = 2;
  spec_.obs_dim = 3;
  spec_.action_space = {ActionSpace::kDiscrete, 3, 0.0, 0.0};
  spec_.horizon = 4;
  spec_.discount = 0.99;
}

StepResult TigerDoorEnv::observe(double reward, bool done) const {
  StepResult r;
  r.state = one_hot(2, tiger_);
  r.obs = one_hot(3, revealed_ ? 1 + tiger_ : 0);
  r.reward = reward;
  r.done = done;
  return r;
}

StepResult TigerDoorEnv::reset(Rng& rng) { return reset_to(rng.uniform() < 0.5 ? 0 : 1, rng); }

StepResult TigerDoorEnv::reset_to(int index, Rng&) {
  tiger_ = index;
  revealed_ = false;
  done_ = false;
  steps_ = 0;
  return observe(0.0, false);
}

StepResult TigerDoorEnv::step(const Eigen::VectorXd& action, Rng&) {
  if (done_) throw std::logic_error("TigerDoorEnv: step after done");
  int a = discrete_action(action, 3);
  ++steps_;
  if (a == kListen) {
    revealed_ = true;
    done_ = steps_ >= spec_.horizon;
    return observe(-0.1, done_);
  }
  // Payoff table: opening the correct door pays 1, the wrong one 0.
  double reward = (a == tiger_) ? 1.0 : 0.0;
  done_ = true;
  return observe(reward, true);
}

// ---------------------------------------------------------------------------
// TigerDoor-alt

TigerDoorAltEnv::TigerDoorAltEnv() {
  spec_.state_dim = 2;
  spec_.obs_dim = 1;
  spec_.action_space = {ActionSpace::kDiscrete, 2, 0.0, 0.0};
  spec_.horizon = 1;
  spec_.discount = 0.99;
}

StepResult TigerDoorAltEnv::reset(Rng& rng) { return reset_to(rng.uniform() < 0.5 ? 0 : 1, rng); }

StepResult TigerDoorAltEnv::reset_to(int index, Rng&) {
  state_ = index;
  done_ = false;
  StepResult r;
  r.state = one_hot(2, state_);
  r.obs = Eigen::VectorXd::Zero(1);
  return r;
}

StepResult TigerDoorAltEnv::step(const Eigen::VectorXd& action, Rng&) {
  if (done_) throw std::logic_error("TigerDoorAltEnv: step after done");
  int a = discrete_action(action, 2);
  static const double payoff[2][2] = {{2.0, 0.0}, {0.0, 1.0}};
  done_ = true;
  StepResult r;
  r.state = one_hot(2, state_);
  r.obs = Eigen::VectorXd::Zero(1);
  r.reward = payoff[state_][a];
  r.done = true;
  return r;
}

// ---------------------------------------------------------------------------
// Noisy masked navigation

NoisyMaskedNavEnv::NoisyMaskedNavEnv(double noise_sigma, bool mask_velocity)
    : sigma_(noise_sigma), mask_velocity_(mask_velocity) {
  if (sigma_ < 0.0) throw std::invalid_argument("noise sigma must be nonnegative");
  spec_.state_dim = 6;
  spec_.obs_dim = mask_velocity_ ? 4 : 6;
  spec_.action_space = {ActionSpace::kContinuous, 2, -1.0, 1.0};
  spec_.horizon = 100;
  spec_.discount = 0.99;
}

Eigen::VectorXd NoisyMaskedNavEnv::make_state() const {
  Eigen::VectorXd s(6);
  s << pos_, vel_, goal_;
  return s;
}

Eigen::VectorXd NoisyMaskedNavEnv::make_obs(Rng& rng) const {
  Eigen::Vector2d noisy = pos_;
  noisy(0) += sigma_ * rng.normal();
  noisy(1) += sigma_ * rng.normal();
  if (mask_velocity_) {
    Eigen::VectorXd o(4);
    o << noisy, goal_;
    return o;
  }
  Eigen::VectorXd o(6);
  o << noisy, vel_, goal_;
  return o;
}

StepResult NoisyMaskedNavEnv::reset(Rng& rng) {
  pos_ = {2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
  vel_.setZero();
  goal_ = {2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
  steps_ = 0;
  done_ = false;
  clamped_this_episode_ = false;
  StepResult r;
  r.state = make_state();
  r.obs = make_obs(rng);
  return r;
}

StepResult NoisyMaskedNavEnv::step(const Eigen::VectorXd& action, Rng& rng) {
  if (done_) throw std::logic_error("NoisyMaskedNavEnv: step after done");
  if (action.size() != 2) throw std::invalid_argument("NoisyMaskedNavEnv: action must be 2d");
  Eigen::Vector2d a = action.head<2>();
  if ((a.array() < spec_.action_space.low).any() || (a.array() > spec_.action_space.high).any()) {
    a = a.cwiseMax(spec_.action_space.low).cwiseMin(spec_.action_space.high);
    if (!clamped_this_episode_) {
      clamped_this_episode_ = true;
      ++clamp_events_;
    }
  }
  pos_ += vel_ * kDt;
  vel_ += a * kDt - kFriction * vel_ * kDt;
  ++steps_;

  double dist = (pos_ - goal_).norm();
  StepResult r;
  r.reward = -dist * kDt;
  if (dist <= kGoalRadius) {
    r.reward += 1.0;
    done_ = true;
  } else if (steps_ >= spec_.horizon) {
    done_ = true;
  }
  r.done = done_;
  r.state = make_state();
  r.obs = make_obs(rng);
  return r;
}

// ---------------------------------------------------------------------------
// Repeat-previous memory task

RepeatPreviousEnv::RepeatPreviousEnv(int k) : k_(k) {
  if (k < 1 || k > 4) throw std::invalid_argument("repeat_previous: k must be in 1..4");
  spec_.state_dim = kValues;
  spec_.obs_dim = kValues;
  spec_.action_space = {ActionSpace::kDiscrete, kValues, 0.0, 0.0};
  spec_.horizon = kHorizon;
  spec_.discount = 0.99;
}

Eigen::VectorXd RepeatPreviousEnv::target_state() const {
  if (t_ < k_) return Eigen::VectorXd::Zero(kValues);
  return one_hot(kValues, values_[static_cast<size_t>(t_ - k_)]);
}

StepResult RepeatPreviousEnv::reset(Rng& rng) {
  values_.assign(1, rng.uniform_int(kValues));
  t_ = 0;
  done_ = false;
  StepResult r;
  r.state = target_state();
  r.obs = one_hot(kValues, values_[0]);
  return r;
}

StepResult RepeatPreviousEnv::step(const Eigen::VectorXd& action, Rng& rng) {
  if (done_) throw std::logic_error("RepeatPreviousEnv: step after done");
  int a = discrete_action(action, kValues);
  StepResult r;
  if (t_ >= k_) {
    double unit = 1.0 / static_cast<double>(kHorizon - k_);
    r.reward = (a == values_[static_cast<size_t>(t_ - k_)]) ? unit : -unit;
  }
  ++t_;
  done_ = t_ >= kHorizon;
  r.done = done_;
  values_.push_back(rng.uniform_int(kValues));
  r.state = target_state();
  r.obs = one_hot(kValues, values_[static_cast<size_t>(t_)]);
  return r;
}

// ---------------------------------------------------------------------------
// Observation stacking

ObservationStackWrapper::ObservationStackWrapper(std::unique_ptr<PomdpEnv> inner, int window)
    : inner_(std::move(inner)), window_(window) {
  if (window < 1) throw std::invalid_argument("stack window must be >= 1");
  spec_ = inner_->spec();
  spec_.obs_dim = inner_->spec().obs_dim * window;
}

StepResult ObservationStackWrapper::stack(StepResult r, bool fresh) {
  if (fresh) history_.clear();
  history_.push_back(std::move(r.obs));
  while (static_cast<int>(history_.size()) > window_) history_.pop_front();
  Eigen::VectorXd stacked = Eigen::VectorXd::Zero(spec_.obs_dim);
  int base = inner_->spec().obs_dim;
  int pad = window_ - static_cast<int>(history_.size());
  for (size_t i = 0; i < history_.size(); ++i)
    stacked.segment((pad + static_cast<int>(i)) * base, base) = history_[i];
  r.obs = std::move(stacked);
  return r;
}

StepResult ObservationStackWrapper::reset(Rng& rng) { return stack(inner_->reset(rng), true); }

StepResult ObservationStackWrapper::reset_to(int index, Rng& rng) {
  return stack(inner_->reset_to(index, rng), true);
}

StepResult ObservationStackWrapper::step(const Eigen::VectorXd& action, Rng& rng) {
  return stack(inner_->step(action, rng), false);
}

// ---------------------------------------------------------------------------

std::unique_ptr<PomdpEnv> make_env(const EnvConfig& config) {
  std::unique_ptr<PomdpEnv> env;
  if (config.id == "tigerdoor") {
    env = std::make_unique<TigerDoorEnv>();
  } else if (config.id == "tigerdoor_alt") {
    env = std::make_unique<TigerDoorAltEnv>();
  } else if (config.id == "noisy_masked_nav") {
    env = std::make_unique<NoisyMaskedNavEnv>(config.noise_sigma, config.mask_velocity);
  } else if (config.id == "repeat_previous") {
    env = std::make_unique<RepeatPreviousEnv>(config.k);
  } else {
    throw std::invalid_argument("unknown environment '" + config.id + "'");
  }
  if (config.stack_window > 1)
    env = std::make_unique<ObservationStackWrapper>(std::move(env), config.stack_window);
  return env;
}

EnvPool::EnvPool(const EnvConfig& config, int n_envs, uint64_t seed) {
  if (n_envs < 1) throw std::invalid_argument("EnvPool: need at least one environment");
  envs_.reserve(static_cast<size_t>(n_envs));
  rngs_.reserve(static_cast<size_t>(n_envs));
  for (int i = 0; i < n_envs; ++i) {
    envs_.push_back(make_env(config));
    rngs_.emplace_back(derive_seed(seed, 0x656e76, static_cast<uint64_t>(i)));
  }
}

}  // namespace gpo
