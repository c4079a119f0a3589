#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "gpo/envs.hpp"
#include "gpo/net.hpp"
#include "gpo/objectives.hpp"
#include "gpo/rollout.hpp"

namespace gpo {

/// Full training configuration. Defaults are the didactic preset (see
/// config.hpp for the named presets and the CLI mapping).
struct GpoConfig {
  Algorithm algorithm = Algorithm::kGpoPenalty;
  EnvConfig env;

  double gamma = 0.99;
  double gae_lambda = 1.0;
  double clip_eps = 0.2;
  InnerClipForm inner_form = InnerClipForm::kRho;
  double inner_delta = 0.1;
  double inner_rho = 1.1;
  double kl_threshold_d = 0.001;
  double alpha_scale_k = 1.5;
  double alpha_init = 1.0;  // adaptive start value, or the fixed coefficient
  double learning_rate = 5e-5;
  int n_envs = 64;
  int unroll_len = 1024;
  int n_epochs = 30;
  int n_minibatches = 8;
  long long total_timesteps = 2'000'000;
  double entropy_coef = 0.0;
  double value_coef = 1.0;
  double max_grad_norm = 0.5;
  uint64_t seed = 1;
  bool normalize_advantages = false;
  double advisor_alpha_w = 10.0;
  double a2d_mix_lambda = 0.0;

  std::vector<int> encoder{128};
  std::vector<int> action_decoder{128};
  std::vector<int> value_decoder{128};
  Activation activation = Activation::kLeakyRelu;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  int eval_every = 1;
  int eval_episodes = 512;
  bool eval_greedy = true;

  void validate() const;
  PolicyNetSpec net_spec() const;  // derived from the environment dims
  int iterations() const;          // total_timesteps / (n_envs * unroll_len)
};

/// One row per training iteration. rho_pi_gap is the first-epoch mean
/// |1 - pi(a|o_l)/beta(a|s)| over the freshly collected batch, measured
/// before any update.
struct TrainRecord {
  int iteration = 0;
  long long timesteps = 0;
  double episode_return = 0.0;  // mean over episodes finished in the window
  double eval_return = 0.0;
  double eval_return_std = 0.0;
  LossBreakdown loss;  // iteration averages; alpha is the value in effect
  double rho_pi_gap = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm, last minibatch
};

struct TrainLog {
  std::vector<TrainRecord> records;
  PolicyNetSpec net_spec;
  Eigen::VectorXd final_params;
};

/// Thrown when an update produces a non-finite loss; carries diagnostics of
/// the offending minibatch.
class TrainAbort : public std::runtime_error {
 public:
  TrainAbort(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics(std::move(diagnostics)) {}
  std::string diagnostics;
};

// Called once per iteration with the fresh record; return false to stop the
// run early (the record is still appended).
using IterationCallback = std::function<bool(const TrainRecord&, const Eigen::VectorXd& params)>;

TrainLog train(const GpoConfig& config, const IterationCallback& callback = {});

/// Greedy (distribution mode) or stochastic evaluation of the learner: the
/// policy input is built with a zeroed privileged block, so the hidden state
/// never reaches the network. Environments with finitely many initial states
/// are enumerated in round-robin for exact means.
std::pair<double, double> evaluate_learner(const PolicyNetSpec& spec,
                                           const Eigen::VectorXd& params, PomdpEnv& env,
                                           int n_episodes, Rng& rng, bool greedy = true);

// Flat binary parameter file: magic, format version, FNV-1a hash of the
// canonical net spec, the spec string, then little-endian doubles.
void save_params(const std::string& path, const PolicyNetSpec& spec,
                 const Eigen::VectorXd& params);
std::pair<PolicyNetSpec, Eigen::VectorXd> load_params(const std::string& path);

// CSV with 17 significant digits per value (round-trip exact for doubles).
extern const char* const kTrainCsvHeader;
void write_train_csv(const std::string& path, const TrainLog& log);
std::string format_g17(double v);

}  // namespace gpo
