#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gpo/config.hpp"
#include "gpo/verify.hpp"

namespace py = pybind11;
using namespace gpo;

namespace {

// Seeded environment handle for scripting: owns the instance and its rng.
class PyEnv {
 public:
  PyEnv(const EnvConfig& config, uint64_t seed) : env_(make_env(config)), rng_(seed) {}

  py::dict reset() { return to_dict(env_->reset(rng_)); }
  py::dict step(const Eigen::VectorXd& action) { return to_dict(env_->step(action, rng_)); }
  py::dict spec() const {
    const PomdpSpec& s = env_->spec();
    py::dict d;
    d["state_dim"] = s.state_dim;
    d["obs_dim"] = s.obs_dim;
    d["horizon"] = s.horizon;
    d["discrete"] = s.action_space.kind == ActionSpace::kDiscrete;
    d["n_actions"] = s.action_space.n;
    return d;
  }

 private:
  static py::dict to_dict(const StepResult& r) {
    py::dict d;
    d["state"] = r.state;
    d["obs"] = r.obs;
    d["reward"] = r.reward;
    d["done"] = r.done;
    return d;
  }
  std::unique_ptr<PomdpEnv> env_;
  Rng rng_;
};

GpoConfig config_from_kwargs(const py::kwargs& kwargs) {
  GpoConfig c;
  apply_preset(c, "didactic");
  for (auto item : kwargs) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "preset") apply_preset(c, py::cast<std::string>(item.second));
  }
  for (auto item : kwargs) {
    std::string key = py::cast<std::string>(item.first);
    if (key == "preset") continue;
    else if (key == "algorithm") c.algorithm = algorithm_from_name(py::cast<std::string>(item.second));
    else if (key == "env") c.env.id = py::cast<std::string>(item.second);
    else if (key == "noise_sigma") c.env.noise_sigma = py::cast<double>(item.second);
    else if (key == "k") c.env.k = py::cast<int>(item.second);
    else if (key == "stack_window") c.env.stack_window = py::cast<int>(item.second);
    else if (key == "seed") c.seed = py::cast<uint64_t>(item.second);
    else if (key == "total_timesteps") c.total_timesteps = py::cast<long long>(item.second);
    else if (key == "n_envs") c.n_envs = py::cast<int>(item.second);
    else if (key == "unroll_len") c.unroll_len = py::cast<int>(item.second);
    else if (key == "n_epochs") c.n_epochs = py::cast<int>(item.second);
    else if (key == "n_minibatches") c.n_minibatches = py::cast<int>(item.second);
    else if (key == "learning_rate") c.learning_rate = py::cast<double>(item.second);
    else if (key == "gamma") c.gamma = py::cast<double>(item.second);
    else if (key == "gae_lambda") c.gae_lambda = py::cast<double>(item.second);
    else if (key == "clip_eps") c.clip_eps = py::cast<double>(item.second);
    else if (key == "alpha") c.alpha_init = py::cast<double>(item.second);
    else if (key == "kl_threshold_d") c.kl_threshold_d = py::cast<double>(item.second);
    else if (key == "eval_episodes") c.eval_episodes = py::cast<int>(item.second);
    else if (key == "eval_every") c.eval_every = py::cast<int>(item.second);
    else if (key == "eval_greedy") c.eval_greedy = py::cast<bool>(item.second);
    else if (key == "encoder") c.encoder = py::cast<std::vector<int>>(item.second);
    else if (key == "action_decoder") c.action_decoder = py::cast<std::vector<int>>(item.second);
    else if (key == "value_decoder") c.value_decoder = py::cast<std::vector<int>>(item.second);
    else throw std::invalid_argument("unknown train() keyword '" + key + "'");
  }
  return c;
}

py::dict log_to_dict(const TrainLog& log) {
  py::list iterations, timesteps, episode_return, eval_return, alpha, mean_kl, total, rho_gap;
  for (const auto& r : log.records) {
    iterations.append(r.iteration);
    timesteps.append(r.timesteps);
    episode_return.append(r.episode_return);
    eval_return.append(r.eval_return);
    alpha.append(r.loss.alpha);
    mean_kl.append(r.loss.mean_kl_mu_pi);
    total.append(r.loss.total);
    rho_gap.append(r.rho_pi_gap);
  }
  py::dict d;
  d["iteration"] = iterations;
  d["timesteps"] = timesteps;
  d["episode_return"] = episode_return;
  d["eval_return"] = eval_return;
  d["alpha"] = alpha;
  d["mean_kl_mu_pi"] = mean_kl;
  d["total_loss"] = total;
  d["rho_pi_gap"] = rho_gap;
  d["final_params"] = log.final_params;
  d["net_spec"] = log.net_spec.canonical();
  return d;
}

}  // namespace

PYBIND11_MODULE(_gpocore, m) {
  m.doc() = "Guided policy co-training core";

  py::class_<PyEnv>(m, "Env")
      .def(py::init([](const std::string& id, uint64_t seed, double noise_sigma, int k,
                       int stack_window) {
             EnvConfig config;
             config.id = id;
             config.noise_sigma = noise_sigma;
             config.k = k;
             config.stack_window = stack_window;
             return new PyEnv(config, seed);
           }),
           py::arg("id"), py::arg("seed") = 0, py::arg("noise_sigma") = 0.2, py::arg("k") = 2,
           py::arg("stack_window") = 1)
      .def("reset", &PyEnv::reset)
      .def("step", &PyEnv::step)
      .def("spec", &PyEnv::spec);

  m.def("reward_to_go",
        [](const Eigen::VectorXd& rewards, const Eigen::VectorXd& dones, double gamma,
           const Eigen::VectorXd& bootstrap, int n_envs, int n_steps) {
          return reward_to_go(rewards, dones, gamma, bootstrap, n_envs, n_steps);
        },
        py::arg("rewards"), py::arg("dones"), py::arg("gamma"), py::arg("bootstrap"),
        py::arg("n_envs") = 1, py::arg("n_steps") = -1);

  m.def("gae",
        [](const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
           const Eigen::VectorXd& dones, double gamma, double lam,
           const Eigen::VectorXd& bootstrap, int n_envs, int n_steps) {
          return gae(rewards, values, dones, gamma, lam, bootstrap, n_envs, n_steps);
        });

  m.def("double_clip_ratio", &double_clip_ratio, py::arg("mu"), py::arg("pi"), py::arg("beta"),
        py::arg("delta"), py::arg("eps"));
  m.def("backtrack_mask", &backtrack_mask, py::arg("mu"), py::arg("pi"), py::arg("delta"));
  m.def("halting_conditions_hold", &halting_conditions_hold, py::arg("mu"), py::arg("pi"),
        py::arg("adv"), py::arg("delta"));
  m.def("alpha_update", [](double alpha, double d, double k, double measured_l3) {
    AlphaState s{alpha, d, k};
    return alpha_update(s, measured_l3).alpha;
  });

  m.def("train", [](const py::kwargs& kwargs) { return log_to_dict(train(config_from_kwargs(kwargs))); });

  m.def("evaluate",
        [](const std::string& net_spec, const Eigen::VectorXd& params, const std::string& env_id,
           int episodes, uint64_t seed, bool greedy, double noise_sigma, int k, int stack_window) {
          EnvConfig config;
          config.id = env_id;
          config.noise_sigma = noise_sigma;
          config.k = k;
          config.stack_window = stack_window;
          auto env = make_env(config);
          Rng rng(seed);
          auto [mean, std] = evaluate_learner(PolicyNetSpec::from_canonical(net_spec), params,
                                              *env, episodes, rng, greedy);
          return py::make_tuple(mean, std);
        },
        py::arg("net_spec"), py::arg("params"), py::arg("env"), py::arg("episodes") = 256,
        py::arg("seed") = 0, py::arg("greedy") = true, py::arg("noise_sigma") = 0.2,
        py::arg("k") = 2, py::arg("stack_window") = 1);

  m.def("prop1_check_random", [](int instances, uint64_t seed, bool fully_observable) {
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < instances; ++i) {
      TabularPomdp m = random_tabular_instance(rng, fully_observable);
      PolicyTable pi0 = floor_policy(PolicyTable::Constant(m.n_obs, m.n_actions, 1.0));
      worst = std::max(worst, prop1_check(m, pi0, 0.1, 20));
    }
    return worst;
  }, py::arg("instances") = 5, py::arg("seed") = 1, py::arg("fully_observable") = false);

  m.def("tigerdoor_alt_dynamics", [](int n_steps, double eta) {
    DynamicsResult r = tigerdoor_alt_dynamics(n_steps, eta);
    py::dict d;
    d["pi_left"] = r.pi_left;
    d["p_always_above_q"] = r.p_always_above_q;
    d["strictly_increasing"] = r.strictly_increasing;
    return d;
  });

  m.def("gradient_check", [](const std::string& algo, uint64_t seed) {
    return gradient_check_once(algorithm_from_name(algo), seed);
  });

  m.def("save_params", [](const std::string& path, const std::string& net_spec,
                          const Eigen::VectorXd& params) {
    save_params(path, PolicyNetSpec::from_canonical(net_spec), params);
  });
  m.def("load_params", [](const std::string& path) {
    auto [spec, params] = load_params(path);
    return py::make_tuple(spec.canonical(), params);
  });
}
