#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "gpo/dist.hpp"
#include "gpo/net.hpp"
#include "gpo/rollout.hpp"

namespace gpo {

enum class Algorithm {
  kPpo,
  kPpoAsym,
  kPpoBc,
  kGpoNaive,
  kGpoAblation,
  kAdvisorCo,
  kA2d,
  kGpoPenalty,
  kGpoClip,
};

Algorithm algorithm_from_name(const std::string& name);
std::string algorithm_name(Algorithm a);
// Which policy collects data and which input feeds the value head.
Role behavior_role(Algorithm a);
Role value_role(Algorithm a);
bool uses_adaptive_alpha(Algorithm a);
bool needs_aux_head(Algorithm a);
bool trains_guider(Algorithm a);

/// Per-update diagnostics. `total` always equals the algorithm's weighted
/// combination of the parts (see expected_total). Parts are stored
/// unweighted; `alpha` is the coefficient in effect.
struct LossBreakdown {
  double guider_rl = 0.0;
  double guider_backtrack = 0.0;
  double learner_rl = 0.0;
  double learner_bc = 0.0;
  double value_mse = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double mean_kl_mu_pi = 0.0;
  double clip_fraction = 0.0;
  double inner_clip_fraction = 0.0;
};

/// Adaptive coefficient for the guider's backtracking penalty: scaled up by k
/// when the measured divergence exceeds k*d, down when it falls below d/k,
/// then clamped.
struct AlphaState {
  double alpha = 1.0;
  double d = 0.001;
  double k = 1.5;
  double alpha_min = 1e-3;
  double alpha_max = 1e3;
};

AlphaState alpha_update(AlphaState state, double measured_l3);

enum class InnerClipForm { kDelta, kRho };

struct LossOptions {
  double clip_eps = 0.2;
  InnerClipForm inner_form = InnerClipForm::kDelta;
  double inner_delta = 0.1;
  double inner_rho = 1.1;
  double alpha = 1.0;  // adaptive value (penalty) or fixed coefficient (clip)
  double entropy_coef = 0.0;
  double value_coef = 1.0;
  double advisor_alpha_w = 10.0;
  bool force_backtrack_mask = false;  // diagnostic: apply the backtracking term everywhere
};

// --- scalar building blocks -------------------------------------------------

// clip(clip(mu/pi, 1-delta, 1+delta) * pi/beta, 1-eps, 1+eps)
double double_clip_ratio(double mu_prob, double pi_prob, double beta_prob, double delta,
                         double eps);
// Ratio-form inner clip: clip(mu/pi, 1/rho, rho) replacing the delta band.
double double_clip_ratio_rho(double mu_prob, double pi_prob, double beta_prob, double rho,
                             double eps);
// True iff the double clip halts the guider update for this sample:
// advantage > 0 with mu above the band, or advantage < 0 with mu below it.
bool halting_conditions_hold(double mu_prob, double pi_prob, double adv, double delta);
// 1 iff mu/pi lies outside the open interval (1-delta, 1+delta).
double backtrack_mask(double mu_prob, double pi_prob, double delta);
double backtrack_mask_rho(double mu_prob, double pi_prob, double rho);

// --- tape building blocks ---------------------------------------------------

struct Surrogate {
  ad::Var loss;  // 1x1
  double clip_fraction = 0.0;
};

// -mean(min(rho * adv, clip(rho, 1-eps, 1+eps) * adv)) with
// rho = exp(logp_new - logp_beta).
Surrogate ppo_surrogate(ad::Tape& t, ad::Var logp_new, const Eigen::VectorXd& logp_beta,
                        const Eigen::VectorXd& adv, double eps);
// Per-sample weighted variant (weights carry no gradient).
Surrogate ppo_surrogate_weighted(ad::Tape& t, ad::Var logp_new, const Eigen::VectorXd& logp_beta,
                                 const Eigen::VectorXd& adv, double eps,
                                 const Eigen::VectorXd& weights);

enum class BcDirection { kToGuider, kToLearner };

// mean KL(mu || pi); the direction picks which side keeps its gradient, the
// other is wrapped in stop_gradient.
ad::Var bc_kl(ad::Tape& t, const DistBatch& mu, const DistBatch& pi, BcDirection direction);

// --- merged objectives -------------------------------------------------------

/// Constant views of one minibatch.
struct MinibatchData {
  Eigen::MatrixXd guider_obs, learner_obs, actions;
  Eigen::VectorXd behavior_logprob, advantages, returns;
  static MinibatchData slice(const Batch& batch, const std::vector<int>& idx);
};

/// Forward results a loss needs. The frozen copies are the stop-gradient
/// side of the BC terms; production code freezes the live distributions,
/// gradient-check code may substitute an independently evaluated copy.
struct PolicyForward {
  DistBatch mu, pi;
  DistBatch mu_frozen, pi_frozen;
  ad::Var value;
  bool has_mu = false;
  bool has_aux = false;
  DistBatch aux, aux_frozen;
};

PolicyForward forward_minibatch(ad::Tape& t, const BoundNet& net, Algorithm algo,
                                const MinibatchData& mb);

/// Distribution parameters captured at a fixed parameter vector, for
/// plugging into the stop-gradient slots when checking gradients against
/// finite differences of the live side alone.
struct FrozenForward {
  DistKind kind = DistKind::kCategorical;
  bool has_mu = false, has_aux = false;
  Eigen::MatrixXd mu_probs, mu_log_probs, mu_mean, mu_log_std;
  Eigen::MatrixXd pi_probs, pi_log_probs, pi_mean, pi_log_std;
  Eigen::MatrixXd aux_probs, aux_log_probs, aux_mean, aux_log_std;
};

FrozenForward capture_frozen(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                             Algorithm algo, const MinibatchData& mb);
PolicyForward forward_minibatch_with_frozen(ad::Tape& t, const BoundNet& net, Algorithm algo,
                                            const MinibatchData& mb,
                                            const FrozenForward& frozen);

/// The double-clipped guider surrogate of the clip variant, isolated so its
/// halting behavior can be probed directly. The learner log-probabilities
/// must already be gradient-free.
struct GuiderClipTerm {
  ad::Var loss;
  double clip_fraction = 0.0;
  double inner_clip_fraction = 0.0;
  Eigen::VectorXd mask;  // backtracking mask per sample, no gradient
};

GuiderClipTerm gpo_clip_guider_term(ad::Tape& t, ad::Var logp_mu, ad::Var logp_pi_frozen,
                                    const Eigen::VectorXd& logp_beta,
                                    const Eigen::VectorXd& adv, const LossOptions& options);

struct LossResult {
  ad::Var total;
  LossBreakdown parts;
};

LossResult build_loss(ad::Tape& t, Algorithm algo, const PolicyForward& fwd,
                      const MinibatchData& mb, const LossOptions& options);

// Recombines a breakdown into the total for the given algorithm; the
// bookkeeping identity total == expected_total holds to rounding.
double expected_total(Algorithm algo, const LossBreakdown& parts, const LossOptions& options);

}  // namespace gpo
