#pragma once

#include <Eigen/Core>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "gpo/rng.hpp"

namespace gpo {

struct ActionSpace {
  enum Kind { kDiscrete, kContinuous };
  Kind kind = kDiscrete;
  int n = 0;          // discrete action count or continuous dimension
  double low = -1.0;  // continuous bounds
  double high = 1.0;
};

struct PomdpSpec {
  int state_dim = 0;
  int obs_dim = 0;
  ActionSpace action_space;
  int horizon = 1;
  double discount = 0.99;
};

struct StepResult {
  Eigen::VectorXd state;  // privileged state
  Eigen::VectorXd obs;    // partial observation
  double reward = 0.0;
  bool done = false;
};

/// Environment contract: every step emits the paired privileged state and
/// partial observation. The observation is always derived from the state
/// (possibly with noise), never the other way round. After done, the episode
/// must be reset before stepping again.
class PomdpEnv {
 public:
  virtual ~PomdpEnv() = default;
  virtual const PomdpSpec& spec() const = 0;
  virtual StepResult reset(Rng& rng) = 0;
  virtual StepResult step(const Eigen::VectorXd& action, Rng& rng) = 0;

  // Finite enumeration of initial conditions, when the environment has one.
  // Used for stratified evaluation; 0 means unsupported.
  virtual int initial_state_count() const { return 0; }
  virtual StepResult reset_to(int /*index*/, Rng& /*rng*/) {
    throw std::logic_error("reset_to: not supported by this environment");
  }
};

/// Two doors, a tiger behind one. Actions: open left, open right, listen.
/// Listening costs -0.1 and reveals the hidden state in the next
/// observation; opening pays per the payoff table and terminates. Episodes
/// are capped at 4 steps. State is a one-hot over {left, right}; the
/// observation is a one-hot over {unknown, revealed-left, revealed-right}.
class TigerDoorEnv : public PomdpEnv {
 public:
  static constexpr int kOpenLeft = 0, kOpenRight = 1, kListen = 2;
  TigerDoorEnv();
  const PomdpSpec& spec() const override { return spec_; }
  StepResult reset(Rng& rng) override;
  StepResult step(const Eigen::VectorXd& action, Rng& rng) override;
  int initial_state_count() const override { return 2; }
  StepResult reset_to(int index, Rng& rng) override;

 private:
  StepResult observe(double reward, bool done) const;
  PomdpSpec spec_;
  int tiger_ = 0;  // 0 = left, 1 = right
  bool revealed_ = false;
  bool done_ = true;
  int steps_ = 0;
};

/// One-shot variant: no listening, opening the left door pays 2 in state
/// left and the right door pays 1 in state right. The observation carries no
/// information, so greedy imitation of a privileged teacher averages the two
/// optimal actions.
class TigerDoorAltEnv : public PomdpEnv {
 public:
  TigerDoorAltEnv();
  const PomdpSpec& spec() const override { return spec_; }
  StepResult reset(Rng& rng) override;
  StepResult step(const Eigen::VectorXd& action, Rng& rng) override;
  int initial_state_count() const override { return 2; }
  StepResult reset_to(int index, Rng& rng) override;

 private:
  PomdpSpec spec_;
  int state_ = 0;
  bool done_ = true;
};

/// Point-mass navigation with masked velocity and noisy position readings.
/// State is (position, velocity, goal); the learner sees only a noisy
/// position and the goal. Reaching the goal radius pays a bonus of 1 and
/// ends the episode. Actions outside [-1, 1] are clamped (counted per
/// episode, see clamp_events()).
class NoisyMaskedNavEnv : public PomdpEnv {
 public:
  explicit NoisyMaskedNavEnv(double noise_sigma, bool mask_velocity = true);
  const PomdpSpec& spec() const override { return spec_; }
  StepResult reset(Rng& rng) override;
  StepResult step(const Eigen::VectorXd& action, Rng& rng) override;
  long clamp_events() const { return clamp_events_; }

  static constexpr double kDt = 0.1;
  static constexpr double kFriction = 0.5;
  static constexpr double kGoalRadius = 0.1;

 private:
  Eigen::VectorXd make_state() const;
  Eigen::VectorXd make_obs(Rng& rng) const;
  PomdpSpec spec_;
  double sigma_;
  bool mask_velocity_;
  Eigen::Vector2d pos_, vel_, goal_;
  bool done_ = true;
  int steps_ = 0;
  bool clamped_this_episode_ = false;
  long clamp_events_ = 0;
};

/// Memory task: one of four values is shown each step and the agent is
/// rewarded (+1/(T-k)) for answering with the value from k steps ago, else
/// penalized by the same amount; steps before t = k pay nothing. The
/// privileged state carries the lagged value directly, the observation only
/// the current one.
class RepeatPreviousEnv : public PomdpEnv {
 public:
  static constexpr int kHorizon = 32;
  static constexpr int kValues = 4;
  explicit RepeatPreviousEnv(int k);
  const PomdpSpec& spec() const override { return spec_; }
  StepResult reset(Rng& rng) override;
  StepResult step(const Eigen::VectorXd& action, Rng& rng) override;

 private:
  Eigen::VectorXd target_state() const;
  PomdpSpec spec_;
  int k_;
  std::vector<int> values_;  // values_[t] shown at step t
  int t_ = 0;
  bool done_ = true;
};

/// Stacks the last `window` partial observations (zero-padded at episode
/// start, oldest first) into the learner observation. The privileged state
/// passes through untouched.
class ObservationStackWrapper : public PomdpEnv {
 public:
  ObservationStackWrapper(std::unique_ptr<PomdpEnv> inner, int window);
  const PomdpSpec& spec() const override { return spec_; }
  StepResult reset(Rng& rng) override;
  StepResult step(const Eigen::VectorXd& action, Rng& rng) override;
  int initial_state_count() const override { return inner_->initial_state_count(); }
  StepResult reset_to(int index, Rng& rng) override;

 private:
  StepResult stack(StepResult r, bool fresh);
  std::unique_ptr<PomdpEnv> inner_;
  PomdpSpec spec_;
  int window_;
  std::deque<Eigen::VectorXd> history_;
};

struct EnvConfig {
  std::string id = "tigerdoor_alt";  // tigerdoor | tigerdoor_alt | noisy_masked_nav | repeat_previous
  double noise_sigma = 0.2;          // noisy_masked_nav
  bool mask_velocity = true;         // noisy_masked_nav
  int k = 2;                         // repeat_previous
  int stack_window = 1;              // observation stacking, 1 = off
};

std::unique_ptr<PomdpEnv> make_env(const EnvConfig& config);

/// Independent environment instances with per-instance rng streams: instance
/// i's trajectory depends only on its seed and the actions fed to it.
class EnvPool {
 public:
  EnvPool(const EnvConfig& config, int n_envs, uint64_t seed);
  int size() const { return static_cast<int>(envs_.size()); }
  PomdpEnv& env(int i) { return *envs_[static_cast<size_t>(i)]; }
  Rng& rng(int i) { return rngs_[static_cast<size_t>(i)]; }
  const PomdpSpec& spec() const { return envs_.front()->spec(); }

 private:
  std::vector<std::unique_ptr<PomdpEnv>> envs_;
  std::vector<Rng> rngs_;
};

}  // namespace gpo
