#include "gpo/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace gpo {

namespace {

double clip_scalar(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

Eigen::MatrixXd column(const Eigen::VectorXd& v) { return v; }

// KL(p || q) per sample where one side is frozen; returns the n x 1 column.
ad::Var kl_column(ad::Tape& t, const DistBatch& p, const DistBatch& q) {
  return batch_kl(t, p, q);
}

}  // namespace

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "ppo") return Algorithm::kPpo;
  if (name == "ppo_asym") return Algorithm::kPpoAsym;
  if (name == "ppo_bc") return Algorithm::kPpoBc;
  if (name == "gpo_naive") return Algorithm::kGpoNaive;
  if (name == "gpo_ablation") return Algorithm::kGpoAblation;
  if (name == "advisor_co") return Algorithm::kAdvisorCo;
  if (name == "a2d") return Algorithm::kA2d;
  if (name == "gpo_penalty") return Algorithm::kGpoPenalty;
  if (name == "gpo_clip") return Algorithm::kGpoClip;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kPpo: return "ppo";
    case Algorithm::kPpoAsym: return "ppo_asym";
    case Algorithm::kPpoBc: return "ppo_bc";
    case Algorithm::kGpoNaive: return "gpo_naive";
    case Algorithm::kGpoAblation: return "gpo_ablation";
    case Algorithm::kAdvisorCo: return "advisor_co";
    case Algorithm::kA2d: return "a2d";
    case Algorithm::kGpoPenalty: return "gpo_penalty";
    case Algorithm::kGpoClip: return "gpo_clip";
  }
  return "?";
}

Role behavior_role(Algorithm a) {
  switch (a) {
    case Algorithm::kPpo:
    case Algorithm::kPpoAsym:
    case Algorithm::kAdvisorCo:
    case Algorithm::kA2d:
      return Role::kLearner;
    default:
      return Role::kGuider;
  }
}

Role value_role(Algorithm a) {
  switch (a) {
    case Algorithm::kPpo:
    case Algorithm::kAdvisorCo:
    case Algorithm::kA2d:
      return Role::kLearner;
    default:
      return Role::kGuider;
  }
}

bool uses_adaptive_alpha(Algorithm a) {
  return a == Algorithm::kGpoPenalty || a == Algorithm::kGpoNaive || a == Algorithm::kGpoAblation;
}

bool needs_aux_head(Algorithm a) { return a == Algorithm::kAdvisorCo; }

bool trains_guider(Algorithm a) {
  return a != Algorithm::kPpo && a != Algorithm::kPpoAsym;
}

AlphaState alpha_update(AlphaState state, double measured_l3) {
  if (measured_l3 < 0.0) throw std::invalid_argument("alpha_update: KL must be nonnegative");
  if (measured_l3 > state.k * state.d) {
    state.alpha *= state.k;
  } else if (measured_l3 < state.d / state.k) {
    state.alpha /= state.k;
  }
  state.alpha = clip_scalar(state.alpha, state.alpha_min, state.alpha_max);
  return state;
}

double double_clip_ratio(double mu_prob, double pi_prob, double beta_prob, double delta,
                         double eps) {
  if (mu_prob <= 0.0 || pi_prob <= 0.0 || beta_prob <= 0.0)
    throw std::invalid_argument("double_clip_ratio: probabilities must be positive");
  double inner = clip_scalar(mu_prob / pi_prob, 1.0 - delta, 1.0 + delta);
  return clip_scalar(inner * (pi_prob / beta_prob), 1.0 - eps, 1.0 + eps);
}

double double_clip_ratio_rho(double mu_prob, double pi_prob, double beta_prob, double rho,
                             double eps) {
  if (mu_prob <= 0.0 || pi_prob <= 0.0 || beta_prob <= 0.0)
    throw std::invalid_argument("double_clip_ratio: probabilities must be positive");
  if (rho <= 1.0) throw std::invalid_argument("double_clip_ratio: rho must exceed 1");
  double inner = clip_scalar(mu_prob / pi_prob, 1.0 / rho, rho);
  return clip_scalar(inner * (pi_prob / beta_prob), 1.0 - eps, 1.0 + eps);
}

bool halting_conditions_hold(double mu_prob, double pi_prob, double adv, double delta) {
  if (adv > 0.0 && mu_prob > pi_prob * (1.0 + delta)) return true;
  if (adv < 0.0 && mu_prob < pi_prob * (1.0 - delta)) return true;
  return false;
}

double backtrack_mask(double mu_prob, double pi_prob, double delta) {
  double ratio = mu_prob / pi_prob;
  return (ratio > 1.0 - delta && ratio < 1.0 + delta) ? 0.0 : 1.0;
}

double backtrack_mask_rho(double mu_prob, double pi_prob, double rho) {
  double ratio = mu_prob / pi_prob;
  return (ratio > 1.0 / rho && ratio < rho) ? 0.0 : 1.0;
}

Surrogate ppo_surrogate(ad::Tape& t, ad::Var logp_new, const Eigen::VectorXd& logp_beta,
                        const Eigen::VectorXd& adv, double eps) {
  return ppo_surrogate_weighted(t, logp_new, logp_beta, adv, eps, Eigen::VectorXd());
}

Surrogate ppo_surrogate_weighted(ad::Tape& t, ad::Var logp_new, const Eigen::VectorXd& logp_beta,
                                 const Eigen::VectorXd& adv, double eps,
                                 const Eigen::VectorXd& weights) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("ppo_surrogate: eps must be in (0,1)");
  if (t.value(logp_new).rows() != logp_beta.size() || logp_beta.size() != adv.size())
    throw std::invalid_argument("ppo_surrogate: shape mismatch");
  ad::Var ratio = t.exp(t.sub(logp_new, t.constant(column(logp_beta))));
  ad::Var adv_c = t.constant(column(adv));
  ad::Var unclipped = t.mul(ratio, adv_c);
  ad::Var clipped = t.mul(t.clip(ratio, 1.0 - eps, 1.0 + eps), adv_c);
  ad::Var per_sample = t.min(unclipped, clipped);
  if (weights.size() > 0) per_sample = t.mul(per_sample, t.constant(column(weights)));
  Surrogate s;
  s.loss = t.scale(t.mean(per_sample), -1.0);
  const Eigen::MatrixXd& rv = t.value(ratio);
  int clipped_count = 0;
  for (Eigen::Index i = 0; i < rv.rows(); ++i)
    if (rv(i, 0) < 1.0 - eps || rv(i, 0) > 1.0 + eps) ++clipped_count;
  s.clip_fraction = static_cast<double>(clipped_count) / static_cast<double>(rv.rows());
  return s;
}

ad::Var bc_kl(ad::Tape& t, const DistBatch& mu, const DistBatch& pi, BcDirection direction) {
  if (mu.kind != pi.kind) throw std::invalid_argument("bc_kl: distribution family mismatch");
  DistBatch p = direction == BcDirection::kToGuider ? mu : batch_stop_gradient(t, mu);
  DistBatch q = direction == BcDirection::kToGuider ? batch_stop_gradient(t, pi) : pi;
  return t.mean(batch_kl(t, p, q));
}

MinibatchData MinibatchData::slice(const Batch& batch, const std::vector<int>& idx) {
  MinibatchData mb;
  const int n = static_cast<int>(idx.size());
  mb.guider_obs.resize(n, batch.guider_obs.cols());
  mb.learner_obs.resize(n, batch.learner_obs.cols());
  mb.actions.resize(n, batch.actions.cols());
  mb.behavior_logprob.resize(n);
  mb.advantages.resize(n);
  mb.returns.resize(n);
  for (int i = 0; i < n; ++i) {
    const int row = idx[static_cast<size_t>(i)];
    mb.guider_obs.row(i) = batch.guider_obs.row(row);
    mb.learner_obs.row(i) = batch.learner_obs.row(row);
    mb.actions.row(i) = batch.actions.row(row);
    mb.behavior_logprob(i) = batch.behavior_logprob(row);
    mb.advantages(i) = batch.advantages(row);
    mb.returns(i) = batch.returns(row);
  }
  return mb;
}

PolicyForward forward_minibatch(ad::Tape& t, const BoundNet& net, Algorithm algo,
                                const MinibatchData& mb) {
  PolicyForward fwd;
  const bool need_mu = trains_guider(algo) || algo == Algorithm::kPpoAsym;
  // PPO-asym still needs no guider policy, only the privileged value input.
  ad::Var trunk_l = net.trunk(mb.learner_obs);
  fwd.pi = net.policy_head(trunk_l);
  fwd.pi_frozen = batch_stop_gradient(t, fwd.pi);
  if (trains_guider(algo)) {
    ad::Var trunk_g = net.trunk(mb.guider_obs);
    fwd.mu = net.policy_head(trunk_g);
    fwd.mu_frozen = batch_stop_gradient(t, fwd.mu);
    fwd.has_mu = true;
    fwd.value = value_role(algo) == Role::kGuider ? net.value_head(trunk_g)
                                                  : net.value_head(trunk_l);
  } else {
    fwd.value = value_role(algo) == Role::kGuider ? net.value(mb.guider_obs)
                                                  : net.value_head(trunk_l);
  }
  if (needs_aux_head(algo)) {
    fwd.aux = net.aux_policy_head(trunk_l);
    fwd.aux_frozen = batch_stop_gradient(t, fwd.aux);
    fwd.has_aux = true;
  }
  (void)need_mu;
  return fwd;
}

FrozenForward capture_frozen(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                             Algorithm algo, const MinibatchData& mb) {
  ad::Tape tape;
  BoundNet net(tape, spec, params);
  PolicyForward fwd = forward_minibatch(tape, net, algo, mb);
  FrozenForward out;
  out.kind = fwd.pi.kind;
  auto grab = [&](const DistBatch& d, Eigen::MatrixXd& probs, Eigen::MatrixXd& log_probs,
                  Eigen::MatrixXd& mean, Eigen::MatrixXd& log_std) {
    if (d.kind == DistKind::kCategorical) {
      probs = tape.value(d.probs);
      log_probs = tape.value(d.log_probs);
    } else {
      mean = tape.value(d.mean);
      log_std = tape.value(d.log_std);
    }
  };
  grab(fwd.pi, out.pi_probs, out.pi_log_probs, out.pi_mean, out.pi_log_std);
  if (fwd.has_mu) {
    out.has_mu = true;
    grab(fwd.mu, out.mu_probs, out.mu_log_probs, out.mu_mean, out.mu_log_std);
  }
  if (fwd.has_aux) {
    out.has_aux = true;
    grab(fwd.aux, out.aux_probs, out.aux_log_probs, out.aux_mean, out.aux_log_std);
  }
  return out;
}

PolicyForward forward_minibatch_with_frozen(ad::Tape& t, const BoundNet& net, Algorithm algo,
                                            const MinibatchData& mb,
                                            const FrozenForward& frozen) {
  PolicyForward fwd = forward_minibatch(t, net, algo, mb);
  auto constant_dist = [&](const Eigen::MatrixXd& probs, const Eigen::MatrixXd& log_probs,
                           const Eigen::MatrixXd& mean, const Eigen::MatrixXd& log_std) {
    DistBatch d;
    d.kind = frozen.kind;
    if (frozen.kind == DistKind::kCategorical) {
      d.probs = t.constant(probs);
      d.log_probs = t.constant(log_probs);
      d.rows = static_cast<int>(probs.rows());
    } else {
      d.mean = t.constant(mean);
      d.log_std = t.constant(log_std);
      d.rows = static_cast<int>(mean.rows());
    }
    return d;
  };
  fwd.pi_frozen = constant_dist(frozen.pi_probs, frozen.pi_log_probs, frozen.pi_mean,
                                frozen.pi_log_std);
  if (frozen.has_mu)
    fwd.mu_frozen = constant_dist(frozen.mu_probs, frozen.mu_log_probs, frozen.mu_mean,
                                  frozen.mu_log_std);
  if (frozen.has_aux)
    fwd.aux_frozen = constant_dist(frozen.aux_probs, frozen.aux_log_probs, frozen.aux_mean,
                                   frozen.aux_log_std);
  return fwd;
}

GuiderClipTerm gpo_clip_guider_term(ad::Tape& t, ad::Var logp_mu, ad::Var logp_pi_frozen,
                                    const Eigen::VectorXd& logp_beta,
                                    const Eigen::VectorXd& adv, const LossOptions& opt) {
  if (t.needs_grad(logp_pi_frozen))
    throw std::invalid_argument("gpo_clip_guider_term: learner side must carry no gradient");
  ad::Var inner_ratio = t.exp(t.sub(logp_mu, logp_pi_frozen));
  double lo = opt.inner_form == InnerClipForm::kDelta ? 1.0 - opt.inner_delta
                                                      : 1.0 / opt.inner_rho;
  double hi = opt.inner_form == InnerClipForm::kDelta ? 1.0 + opt.inner_delta : opt.inner_rho;
  ad::Var inner_clipped = t.clip(inner_ratio, lo, hi);
  ad::Var pi_over_beta = t.exp(t.sub(logp_pi_frozen, t.constant(column(logp_beta))));
  ad::Var product = t.mul(inner_clipped, pi_over_beta);
  ad::Var ratio_clipped = t.clip(product, 1.0 - opt.clip_eps, 1.0 + opt.clip_eps);
  ad::Var ratio_raw = t.exp(t.sub(logp_mu, t.constant(column(logp_beta))));
  ad::Var adv_c = t.constant(column(adv));
  ad::Var per_sample = t.min(t.mul(ratio_raw, adv_c), t.mul(ratio_clipped, adv_c));

  GuiderClipTerm out;
  out.loss = t.scale(t.mean(per_sample), -1.0);
  const Eigen::MatrixXd& inner_vals = t.value(inner_ratio);
  const Eigen::MatrixXd& product_vals = t.value(product);
  const int n = static_cast<int>(inner_vals.rows());
  out.mask.resize(n);
  int inner_clip_count = 0, outer_clip_count = 0;
  for (int i = 0; i < n; ++i) {
    double r = inner_vals(i, 0);
    bool outside = !(r > lo && r < hi);
    if (outside) ++inner_clip_count;
    out.mask(i) = (outside || opt.force_backtrack_mask) ? 1.0 : 0.0;
    double p = product_vals(i, 0);
    if (p < 1.0 - opt.clip_eps || p > 1.0 + opt.clip_eps) ++outer_clip_count;
  }
  out.inner_clip_fraction = static_cast<double>(inner_clip_count) / n;
  out.clip_fraction = static_cast<double>(outer_clip_count) / n;
  return out;
}

namespace {

// Shared tail: value regression, entropy bonus, diagnostics.
struct CommonTerms {
  ad::Var value_mse;
  ad::Var entropy;
};

CommonTerms common_terms(ad::Tape& t, const PolicyForward& fwd, const MinibatchData& mb,
                         const DistBatch& behavior_dist) {
  CommonTerms c;
  c.value_mse = t.mean(t.square(t.sub(fwd.value, t.constant(column(mb.returns)))));
  c.entropy = t.mean(batch_entropy(t, behavior_dist));
  return c;
}

double mean_kl_value(ad::Tape& t, const PolicyForward& fwd) {
  if (!fwd.has_mu) return 0.0;
  ad::Var kl = batch_kl(t, fwd.mu_frozen, fwd.pi_frozen);
  return t.value(kl).mean();
}

}  // namespace

LossResult build_loss(ad::Tape& t, Algorithm algo, const PolicyForward& fwd,
                      const MinibatchData& mb, const LossOptions& opt) {
  LossResult result;
  LossBreakdown& parts = result.parts;
  parts.alpha = opt.alpha;

  ad::Var logp_pi = batch_logprob(t, fwd.pi, mb.actions);
  ad::Var logp_mu;
  if (fwd.has_mu) logp_mu = batch_logprob(t, fwd.mu, mb.actions);

  const DistBatch& behavior_dist =
      behavior_role(algo) == Role::kGuider ? fwd.mu : fwd.pi;
  CommonTerms common = common_terms(t, fwd, mb, behavior_dist);
  parts.value_mse = t.value(common.value_mse)(0, 0);
  parts.entropy = t.value(common.entropy)(0, 0);
  parts.mean_kl_mu_pi = mean_kl_value(t, fwd);

  ad::Var total = t.scale(common.value_mse, opt.value_coef);
  if (opt.entropy_coef != 0.0) total = t.add(total, t.scale(common.entropy, -opt.entropy_coef));

  auto add_guider_rl = [&]() {
    Surrogate s = ppo_surrogate(t, logp_mu, mb.behavior_logprob, mb.advantages, opt.clip_eps);
    parts.guider_rl = t.value(s.loss)(0, 0);
    parts.clip_fraction = s.clip_fraction;
    total = t.add(total, s.loss);
  };
  auto add_learner_rl = [&](double coef) {
    Surrogate s = ppo_surrogate(t, logp_pi, mb.behavior_logprob, mb.advantages, opt.clip_eps);
    parts.learner_rl = t.value(s.loss)(0, 0);
    if (!fwd.has_mu) parts.clip_fraction = s.clip_fraction;
    if (coef != 0.0) total = t.add(total, t.scale(s.loss, coef));
  };
  auto add_backtrack = [&](double coef) {
    ad::Var kl = t.mean(kl_column(t, fwd.mu, fwd.pi_frozen));
    parts.guider_backtrack = t.value(kl)(0, 0);
    if (coef != 0.0) total = t.add(total, t.scale(kl, coef));
  };
  auto add_learner_bc = [&]() {
    ad::Var kl = t.mean(kl_column(t, fwd.mu_frozen, fwd.pi));
    parts.learner_bc = t.value(kl)(0, 0);
    total = t.add(total, kl);
  };

  switch (algo) {
    case Algorithm::kPpo:
    case Algorithm::kPpoAsym: {
      add_learner_rl(1.0);
      break;
    }
    case Algorithm::kPpoBc:
    case Algorithm::kA2d: {
      // Teacher PPO plus plain distillation. For A2d the behavioral policy is
      // the learner, so the guider ratio starts away from 1.
      add_guider_rl();
      add_learner_bc();
      break;
    }
    case Algorithm::kGpoNaive: {
      add_guider_rl();
      add_backtrack(opt.alpha);
      add_learner_bc();
      break;
    }
    case Algorithm::kGpoAblation: {
      add_guider_rl();
      add_backtrack(opt.alpha);
      add_learner_rl(1.0);
      break;
    }
    case Algorithm::kAdvisorCo: {
      add_guider_rl();
      // Per-sample weight w = exp(-alpha_w * KL(mu || aux)), no gradient.
      Eigen::VectorXd kl_aux = t.value(batch_kl(t, fwd.mu_frozen, fwd.aux_frozen)).col(0);
      Eigen::VectorXd w = (-opt.advisor_alpha_w * kl_aux.array()).exp();
      // Cross-entropy CE(mu, pi) = KL(mu || pi) + H(mu), mu frozen.
      ad::Var ce = t.add(kl_column(t, fwd.mu_frozen, fwd.pi),
                         batch_entropy(t, fwd.mu_frozen));
      ad::Var weighted_ce = t.mean(t.mul(ce, t.constant(column(w))));
      ad::Var aux_bc = t.mean(kl_column(t, fwd.mu_frozen, fwd.aux));
      // The auxiliary head's imitation term is reported inside learner_bc.
      ad::Var bc_total = t.add(weighted_ce, aux_bc);
      parts.learner_bc = t.value(bc_total)(0, 0);
      total = t.add(total, bc_total);
      Eigen::VectorXd one_minus_w = 1.0 - w.array();
      Surrogate s = ppo_surrogate_weighted(t, logp_pi, mb.behavior_logprob, mb.advantages,
                                           opt.clip_eps, one_minus_w);
      parts.learner_rl = t.value(s.loss)(0, 0);
      total = t.add(total, s.loss);
      break;
    }
    case Algorithm::kGpoPenalty: {
      add_guider_rl();
      add_backtrack(opt.alpha);
      Surrogate s = ppo_surrogate(t, logp_pi, mb.behavior_logprob, mb.advantages, opt.clip_eps);
      parts.learner_rl = t.value(s.loss)(0, 0);
      total = t.add(total, t.scale(s.loss, opt.alpha));
      add_learner_bc();
      break;
    }
    case Algorithm::kGpoClip: {
      // Guider term with the double-clipped ratio; the learner policy inside
      // the clip carries no gradient.
      ad::Var logp_pi_frozen = batch_logprob(t, fwd.pi_frozen, mb.actions);
      GuiderClipTerm guider = gpo_clip_guider_term(t, logp_mu, logp_pi_frozen,
                                                   mb.behavior_logprob, mb.advantages, opt);
      parts.guider_rl = t.value(guider.loss)(0, 0);
      parts.inner_clip_fraction = guider.inner_clip_fraction;
      parts.clip_fraction = guider.clip_fraction;
      total = t.add(total, guider.loss);

      ad::Var masked_kl =
          t.mean(t.mul(kl_column(t, fwd.mu, fwd.pi_frozen), t.constant(column(guider.mask))));
      parts.guider_backtrack = t.value(masked_kl)(0, 0);
      total = t.add(total, masked_kl);

      Surrogate s = ppo_surrogate(t, logp_pi, mb.behavior_logprob, mb.advantages, opt.clip_eps);
      parts.learner_rl = t.value(s.loss)(0, 0);
      if (opt.alpha != 0.0) total = t.add(total, t.scale(s.loss, opt.alpha));
      add_learner_bc();
      break;
    }
  }

  result.total = total;
  parts.total = t.value(total)(0, 0);
  return result;
}

double expected_total(Algorithm algo, const LossBreakdown& p, const LossOptions& opt) {
  double tail = opt.value_coef * p.value_mse - opt.entropy_coef * p.entropy;
  switch (algo) {
    case Algorithm::kPpo:
    case Algorithm::kPpoAsym:
      return p.learner_rl + tail;
    case Algorithm::kPpoBc:
    case Algorithm::kA2d:
      return p.guider_rl + p.learner_bc + tail;
    case Algorithm::kGpoNaive:
      return p.guider_rl + opt.alpha * p.guider_backtrack + p.learner_bc + tail;
    case Algorithm::kGpoAblation:
      return p.guider_rl + opt.alpha * p.guider_backtrack + p.learner_rl + tail;
    case Algorithm::kAdvisorCo:
      return p.guider_rl + p.learner_rl + p.learner_bc + tail;
    case Algorithm::kGpoPenalty:
      return p.guider_rl + opt.alpha * (p.guider_backtrack + p.learner_rl) + p.learner_bc + tail;
    case Algorithm::kGpoClip:
      return p.guider_rl + p.guider_backtrack + opt.alpha * p.learner_rl + p.learner_bc + tail;
  }
  return 0.0;
}

}  // namespace gpo
