#include "gpo/trainer.hpp"

#include <cinttypes>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gpo {

namespace {

struct Adam {
  explicit Adam(Eigen::Index n)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
  Eigen::VectorXd m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
  }
};

// Global L2 clipping; returns the pre-clip norm.
double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

std::string minibatch_diagnostics(const MinibatchData& mb, const LossBreakdown& parts) {
  std::ostringstream os;
  os << "minibatch diagnostics\n"
     << "  size: " << mb.advantages.size() << "\n"
     << "  adv min/max: " << mb.advantages.minCoeff() << " / " << mb.advantages.maxCoeff() << "\n"
     << "  returns min/max: " << mb.returns.minCoeff() << " / " << mb.returns.maxCoeff() << "\n"
     << "  behavior logp min/max: " << mb.behavior_logprob.minCoeff() << " / "
     << mb.behavior_logprob.maxCoeff() << "\n"
     << "  parts: guider_rl=" << parts.guider_rl << " backtrack=" << parts.guider_backtrack
     << " learner_rl=" << parts.learner_rl << " learner_bc=" << parts.learner_bc
     << " value_mse=" << parts.value_mse << " entropy=" << parts.entropy << "\n";
  return os.str();
}

double mean_abs_one_minus_rho_pi(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                                 const Batch& batch) {
  ad::Tape tape;
  BoundNet net(tape, spec, params);
  DistBatch pi = net.policy(batch.learner_obs);
  Eigen::VectorXd logp = tape.value(batch_logprob(tape, pi, batch.actions)).col(0);
  return (1.0 - (logp - batch.behavior_logprob).array().exp()).abs().mean();
}

}  // namespace

void GpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("gae_lambda must be in [0,1]");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must be in (0,1)");
  if (n_envs < 1 || unroll_len < 1 || n_epochs < 0 || n_minibatches < 1)
    throw std::invalid_argument("batch geometry must be positive");
  if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
  if (total_timesteps < 0) throw std::invalid_argument("total_timesteps must be nonnegative");
  if (kl_threshold_d <= 0.0) throw std::invalid_argument("kl threshold d must be positive");
  if (alpha_scale_k <= 1.0) throw std::invalid_argument("alpha scale k must exceed 1");
  if (inner_form == InnerClipForm::kRho && inner_rho <= 1.0)
    throw std::invalid_argument("inner clip rho must exceed 1");
  if (inner_form == InnerClipForm::kDelta && inner_delta <= 0.0)
    throw std::invalid_argument("inner clip delta must be positive");
  if (eval_every < 1 || eval_episodes < 1) throw std::invalid_argument("bad eval settings");
  if (max_grad_norm <= 0.0) throw std::invalid_argument("max_grad_norm must be positive");
}

PolicyNetSpec GpoConfig::net_spec() const {
  auto env_instance = make_env(env);
  const PomdpSpec& es = env_instance->spec();
  PolicyNetSpec spec;
  spec.input_dim = es.state_dim + es.obs_dim + 1;
  spec.encoder = encoder;
  spec.action_decoder = action_decoder;
  spec.value_decoder = value_decoder;
  spec.activation = activation;
  spec.log_std_min = log_std_min;
  spec.log_std_max = log_std_max;
  spec.aux_head = needs_aux_head(algorithm);
  if (es.action_space.kind == ActionSpace::kDiscrete) {
    spec.head = {HeadSpec::kCategorical, es.action_space.n};
  } else {
    spec.head = {HeadSpec::kDiagGaussian, es.action_space.n};
  }
  return spec;
}

int GpoConfig::iterations() const {
  long long batch = static_cast<long long>(n_envs) * unroll_len;
  return static_cast<int>(total_timesteps / batch);
}

TrainLog train(const GpoConfig& config, const IterationCallback& callback) {
#ifdef __GLIBC__
  // Large activation buffers churn every minibatch; keeping them on the heap
  // free list instead of mmap round-trips saves page-fault time.
  static const int malloc_tuned = []() {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    return 0;
  }();
  (void)malloc_tuned;
#endif
  config.validate();
  TrainLog log;
  log.net_spec = config.net_spec();

  Rng init_rng(derive_seed(config.seed, 0x696e6974));
  Eigen::VectorXd params = init_params(log.net_spec, init_rng);
  Adam adam(params.size());

  EnvPool pool(config.env, config.n_envs, derive_seed(config.seed, 0x706f6f6c));
  auto eval_env = make_env(config.env);
  Rng eval_rng(derive_seed(config.seed, 0x6576616c));
  Rng shuffle_rng(derive_seed(config.seed, 0x73687566));

  CollectOptions collect_opts;
  collect_opts.behavior = behavior_role(config.algorithm);
  collect_opts.value_input = value_role(config.algorithm);
  if (config.algorithm == Algorithm::kA2d && config.a2d_mix_lambda > 0.0)
    collect_opts.mix_lambda = config.a2d_mix_lambda;

  AlphaState alpha_state{config.alpha_init, config.kl_threshold_d, config.alpha_scale_k};

  LossOptions loss_opts;
  loss_opts.clip_eps = config.clip_eps;
  loss_opts.inner_form = config.inner_form;
  loss_opts.inner_delta = config.inner_delta;
  loss_opts.inner_rho = config.inner_rho;
  loss_opts.alpha = config.alpha_init;
  loss_opts.entropy_coef = config.entropy_coef;
  loss_opts.value_coef = config.value_coef;
  loss_opts.advisor_alpha_w = config.advisor_alpha_w;

  const int n_iterations = config.iterations();
  long long timesteps = 0;

  for (int iter = 0; iter < n_iterations; ++iter) {
    Batch batch = collect(pool, log.net_spec, params, config.unroll_len, collect_opts);
    timesteps += batch.size();

    TrainRecord record;
    record.iteration = iter;
    record.rho_pi_gap = mean_abs_one_minus_rho_pi(log.net_spec, params, batch);

    batch.returns = reward_to_go(batch.rewards, batch.dones, config.gamma,
                                 batch.bootstrap_values, batch.n_envs, batch.n_steps);
    batch.advantages = gae(batch.rewards, batch.values, batch.dones, config.gamma,
                           config.gae_lambda, batch.bootstrap_values, batch.n_envs,
                           batch.n_steps);
    if (config.normalize_advantages) normalize_advantages(batch.advantages);

    auto plan = minibatch_plan(batch.size(), config.n_minibatches, config.n_epochs, shuffle_rng);
    LossBreakdown avg;
    double last_epoch_kl = 0.0;
    int last_epoch_count = 0;
    const int per_epoch = config.n_minibatches;
    const int total_steps = static_cast<int>(plan.size());

    for (int s = 0; s < total_steps; ++s) {
      MinibatchData mb = MinibatchData::slice(batch, plan[static_cast<size_t>(s)]);
      ad::Tape tape;
      BoundNet net(tape, log.net_spec, params);
      PolicyForward fwd = forward_minibatch(tape, net, config.algorithm, mb);
      LossResult loss;
      try {
        loss = build_loss(tape, config.algorithm, fwd, mb, loss_opts);
        tape.backward(loss.total);
      } catch (const ad::NonFiniteError& err) {
        throw TrainAbort(std::string("training aborted: ") + err.what(),
                         minibatch_diagnostics(mb, loss.parts));
      }
      Eigen::VectorXd grad = net.grad();
      record.grad_norm = clip_grad_norm(grad, config.max_grad_norm);
      adam.step(params, grad, config.learning_rate);

      avg.guider_rl += loss.parts.guider_rl;
      avg.guider_backtrack += loss.parts.guider_backtrack;
      avg.learner_rl += loss.parts.learner_rl;
      avg.learner_bc += loss.parts.learner_bc;
      avg.value_mse += loss.parts.value_mse;
      avg.entropy += loss.parts.entropy;
      avg.total += loss.parts.total;
      avg.mean_kl_mu_pi += loss.parts.mean_kl_mu_pi;
      avg.clip_fraction += loss.parts.clip_fraction;
      avg.inner_clip_fraction += loss.parts.inner_clip_fraction;
      if (s >= total_steps - per_epoch) {
        last_epoch_kl += loss.parts.mean_kl_mu_pi;
        ++last_epoch_count;
      }
    }
    if (total_steps > 0) {
      double inv = 1.0 / total_steps;
      avg.guider_rl *= inv;
      avg.guider_backtrack *= inv;
      avg.learner_rl *= inv;
      avg.learner_bc *= inv;
      avg.value_mse *= inv;
      avg.entropy *= inv;
      avg.total *= inv;
      avg.mean_kl_mu_pi *= inv;
      avg.clip_fraction *= inv;
      avg.inner_clip_fraction *= inv;
    }
    avg.alpha = loss_opts.alpha;
    record.loss = avg;
    record.timesteps = timesteps;

    // One alpha adjustment per iteration, from the last epoch's mean KL.
    if (uses_adaptive_alpha(config.algorithm) && last_epoch_count > 0) {
      alpha_state.alpha = loss_opts.alpha;
      alpha_state = alpha_update(alpha_state, last_epoch_kl / last_epoch_count);
      loss_opts.alpha = alpha_state.alpha;
    }

    if (!batch.episode_returns.empty()) {
      double sum = 0.0;
      for (double r : batch.episode_returns) sum += r;
      record.episode_return = sum / static_cast<double>(batch.episode_returns.size());
    }

    if (iter % config.eval_every == 0 || iter == n_iterations - 1) {
      auto [mean, std] = evaluate_learner(log.net_spec, params, *eval_env,
                                          config.eval_episodes, eval_rng, config.eval_greedy);
      record.eval_return = mean;
      record.eval_return_std = std;
    } else if (!log.records.empty()) {
      record.eval_return = log.records.back().eval_return;
      record.eval_return_std = log.records.back().eval_return_std;
    }

    log.records.push_back(record);
    if (callback && !callback(record, params)) break;
  }

  log.final_params = params;
  return log;
}

std::pair<double, double> evaluate_learner(const PolicyNetSpec& spec,
                                           const Eigen::VectorXd& params, PomdpEnv& env,
                                           int n_episodes, Rng& rng, bool greedy) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate_learner: need at least one episode");
  const PomdpSpec& es = env.spec();
  const int enumerable = env.initial_state_count();
  double sum = 0.0, sum_sq = 0.0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    StepResult r = enumerable > 0 ? env.reset_to(ep % enumerable, rng) : env.reset(rng);
    double ep_return = 0.0;
    while (true) {
      Eigen::VectorXd input = learner_input(es.state_dim, r.obs);
      ActionDist d = policy_dist(spec, params, input);
      Eigen::VectorXd action = greedy ? dist_mode(d) : dist_sample(d, rng);
      r = env.step(action, rng);
      ep_return += r.reward;
      if (r.done) break;
    }
    sum += ep_return;
    sum_sq += ep_return * ep_return;
  }
  double mean = sum / n_episodes;
  double var = std::max(0.0, sum_sq / n_episodes - mean * mean);
  return {mean, std::sqrt(var)};
}

// ---------------------------------------------------------------------------
// Parameter serialization

namespace {
constexpr char kMagic[8] = {'G', 'P', 'O', 'P', 'A', 'R', 'M', '1'};
constexpr uint32_t kFormatVersion = 1;

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}
}  // namespace

void save_params(const std::string& path, const PolicyNetSpec& spec,
                 const Eigen::VectorXd& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  std::string canon = spec.canonical();
  uint64_t hash = fnv1a(canon);
  uint32_t spec_len = static_cast<uint32_t>(canon.size());
  uint64_t count = static_cast<uint64_t>(params.size());
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kFormatVersion), 4);
  out.write(reinterpret_cast<const char*>(&hash), 8);
  out.write(reinterpret_cast<const char*>(&spec_len), 4);
  out.write(canon.data(), spec_len);
  out.write(reinterpret_cast<const char*>(&count), 8);
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(count * 8));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::pair<PolicyNetSpec, Eigen::VectorXd> load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  char magic[8];
  uint32_t version = 0, spec_len = 0;
  uint64_t hash = 0, count = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&hash), 8);
  in.read(reinterpret_cast<char*>(&spec_len), 4);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("'" + path + "' is not a parameter file");
  if (version != kFormatVersion) throw std::runtime_error("unsupported parameter file version");
  std::string canon(spec_len, '\0');
  in.read(canon.data(), spec_len);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in || fnv1a(canon) != hash) throw std::runtime_error("parameter file corrupted");
  PolicyNetSpec spec = PolicyNetSpec::from_canonical(canon);
  if (count != static_cast<uint64_t>(spec.param_count()))
    throw std::runtime_error("parameter count does not match the stored spec");
  Eigen::VectorXd params(static_cast<Eigen::Index>(count));
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * 8));
  if (!in) throw std::runtime_error("parameter file truncated");
  return {spec, params};
}

// ---------------------------------------------------------------------------
// CSV

const char* const kTrainCsvHeader =
    "iteration,timesteps,episode_return,eval_return,eval_return_std,"
    "guider_rl,guider_backtrack,learner_rl,learner_bc,value_mse,entropy,total,alpha,"
    "mean_kl_mu_pi,clip_fraction,inner_clip_fraction,rho_pi_gap,grad_norm";

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_train_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable newlines
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << kTrainCsvHeader << "\n";
  for (const auto& r : log.records) {
    const LossBreakdown& l = r.loss;
    out << r.iteration << ',' << r.timesteps << ',' << format_g17(r.episode_return) << ','
        << format_g17(r.eval_return) << ',' << format_g17(r.eval_return_std) << ','
        << format_g17(l.guider_rl) << ',' << format_g17(l.guider_backtrack) << ','
        << format_g17(l.learner_rl) << ',' << format_g17(l.learner_bc) << ','
        << format_g17(l.value_mse) << ',' << format_g17(l.entropy) << ','
        << format_g17(l.total) << ',' << format_g17(l.alpha) << ','
        << format_g17(l.mean_kl_mu_pi) << ',' << format_g17(l.clip_fraction) << ','
        << format_g17(l.inner_clip_fraction) << ',' << format_g17(r.rho_pi_gap) << ','
        << format_g17(r.grad_norm) << "\n";
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace gpo
