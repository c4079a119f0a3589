#include "gpo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace gpo {

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw std::invalid_argument("seed list must not be empty");
  if (algorithms.empty()) throw std::invalid_argument("algorithm list must not be empty");
  base.validate();
}

void apply_preset(GpoConfig& c, const std::string& preset) {
  if (preset == "didactic") {
    c.gamma = 0.99;
    c.gae_lambda = 1.0;
    c.clip_eps = 0.2;
    c.inner_form = InnerClipForm::kRho;
    c.inner_rho = 1.1;
    c.kl_threshold_d = 0.001;
    c.alpha_init = 1.0;
    c.learning_rate = 5e-5;
    c.n_envs = 64;
    c.unroll_len = 1024;
    c.n_epochs = 30;
    c.n_minibatches = 8;
    c.total_timesteps = 2'000'000;
    c.entropy_coef = 0.0;
    c.value_coef = 1.0;
    c.max_grad_norm = 0.5;
    c.normalize_advantages = false;
    c.encoder = {128};
    c.action_decoder = {128};
    c.value_decoder = {128};
    c.activation = Activation::kLeakyRelu;
    c.eval_every = 1;
    c.eval_episodes = 512;
    c.eval_greedy = true;
  } else if (preset == "continuous") {
    c.gamma = 0.99;
    c.gae_lambda = 0.95;
    c.clip_eps = 0.3;
    c.inner_form = InnerClipForm::kDelta;
    c.inner_delta = 0.3;
    c.kl_threshold_d = 0.001;
    c.alpha_init = 2.0;
    c.learning_rate = 3e-4;
    c.n_envs = 16;
    c.unroll_len = 128;
    c.n_epochs = 4;
    c.n_minibatches = 8;
    c.total_timesteps = 300'000;
    c.entropy_coef = 0.001;
    c.value_coef = 1.0;
    c.max_grad_norm = 0.5;
    c.normalize_advantages = true;
    c.encoder = {64};
    c.action_decoder = {64};
    c.value_decoder = {64};
    c.activation = Activation::kSilu;
    c.eval_every = 5;
    c.eval_episodes = 64;
    c.eval_greedy = true;
  } else if (preset == "memory") {
    c.gamma = 0.99;
    c.gae_lambda = 1.0;
    c.clip_eps = 0.2;
    c.inner_form = InnerClipForm::kRho;
    c.inner_rho = 10.0;
    c.kl_threshold_d = 0.1;
    c.alpha_init = 0.0;
    c.learning_rate = 3e-4;
    c.n_envs = 16;
    c.unroll_len = 128;
    c.n_epochs = 15;
    c.n_minibatches = 8;
    c.total_timesteps = 200'000;
    c.entropy_coef = 0.0;
    c.value_coef = 1.0;
    c.max_grad_norm = 0.5;
    c.normalize_advantages = false;
    c.encoder = {64};
    c.action_decoder = {64};
    c.value_decoder = {64};
    c.activation = Activation::kLeakyRelu;
    c.eval_every = 5;
    c.eval_episodes = 128;
    c.eval_greedy = true;
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "'");
  }
}

namespace {

struct KeyValue {
  std::string section, key, value;
  int line, col;
};

std::vector<std::string> tokens(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream is(value);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

long long parse_ll(const KeyValue& kv) {
  try {
    size_t pos = 0;
    double v = std::stod(kv.value, &pos);  // accepts 2e6-style literals
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return static_cast<long long>(v);
  } catch (...) {
    throw ConfigError(kv.line, kv.col, "expected an integer for '" + kv.key + "'");
  }
}

int parse_int(const KeyValue& kv) { return static_cast<int>(parse_ll(kv)); }

double parse_double(const KeyValue& kv) {
  try {
    size_t pos = 0;
    double v = std::stod(kv.value, &pos);
    if (pos != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw ConfigError(kv.line, kv.col, "expected a number for '" + kv.key + "'");
  }
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw ConfigError(kv.line, kv.col, "expected true/false for '" + kv.key + "'");
}

std::vector<int> parse_int_list(const KeyValue& kv) {
  std::vector<int> out;
  for (const auto& tok : tokens(kv.value)) {
    try {
      out.push_back(std::stoi(tok));
    } catch (...) {
      throw ConfigError(kv.line, kv.col, "expected integers for '" + kv.key + "'");
    }
  }
  if (out.empty()) throw ConfigError(kv.line, kv.col, "'" + kv.key + "' must not be empty");
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_text(const std::string& text) {
  ExperimentConfig config;
  std::vector<KeyValue> pairs;
  std::set<std::string> seen;
  std::string section;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string body = line.substr(first, last - first + 1);

    if (body.front() == '[') {
      if (body.back() != ']')
        throw ConfigError(line_no, static_cast<int>(first) + 1, "unterminated section header");
      section = body.substr(1, body.size() - 2);
      if (section != "experiment" && section != "env" && section != "train")
        throw ConfigError(line_no, static_cast<int>(first) + 1, "unknown section '" + section + "'");
      continue;
    }
    auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(line_no, static_cast<int>(first) + 1, "expected 'key = value'");
    if (section.empty())
      throw ConfigError(line_no, static_cast<int>(first) + 1, "key outside of a section");
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    KeyValue kv;
    kv.section = section;
    kv.key = trim(body.substr(0, eq));
    kv.value = trim(body.substr(eq + 1));
    kv.line = line_no;
    kv.col = static_cast<int>(first) + 1;
    if (kv.key.empty()) throw ConfigError(line_no, kv.col, "empty key");
    if (kv.value.empty()) throw ConfigError(line_no, kv.col, "empty value for '" + kv.key + "'");
    std::string qualified = section + "." + kv.key;
    if (!seen.insert(qualified).second)
      throw ConfigError(line_no, kv.col, "duplicate key '" + qualified + "'");
    pairs.push_back(std::move(kv));
  }

  // Presets apply first so explicit keys override them.
  for (const auto& kv : pairs) {
    if (kv.section == "train" && kv.key == "preset") {
      try {
        apply_preset(config.base, kv.value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(kv.line, kv.col, e.what());
      }
    }
  }

  GpoConfig& b = config.base;
  for (const auto& kv : pairs) {
    const std::string& k = kv.key;
    try {
      if (kv.section == "experiment") {
        if (k == "name") config.name = kv.value;
        else if (k == "outdir") config.outdir = kv.value;
        else if (k == "seeds") {
          for (int s : parse_int_list(kv)) config.seeds.push_back(static_cast<uint64_t>(s));
        } else if (k == "algorithms") {
          for (const auto& tok : tokens(kv.value))
            config.algorithms.push_back(algorithm_from_name(tok));
        } else if (k == "parallel_seeds") config.parallel_seeds = parse_bool(kv);
        else if (k == "eval_every") b.eval_every = parse_int(kv);
        else if (k == "eval_episodes") b.eval_episodes = parse_int(kv);
        else if (k == "eval_mode") {
          if (kv.value == "greedy") b.eval_greedy = true;
          else if (kv.value == "stochastic") b.eval_greedy = false;
          else throw ConfigError(kv.line, kv.col, "eval_mode must be greedy or stochastic");
        } else throw ConfigError(kv.line, kv.col, "unknown key 'experiment." + k + "'");
      } else if (kv.section == "env") {
        if (k == "id") b.env.id = kv.value;
        else if (k == "noise_sigma") b.env.noise_sigma = parse_double(kv);
        else if (k == "mask_velocity") b.env.mask_velocity = parse_bool(kv);
        else if (k == "k") b.env.k = parse_int(kv);
        else if (k == "stack_window") b.env.stack_window = parse_int(kv);
        else throw ConfigError(kv.line, kv.col, "unknown key 'env." + k + "'");
      } else {  // train
        if (k == "preset") continue;  // handled above
        else if (k == "gamma") b.gamma = parse_double(kv);
        else if (k == "gae_lambda") b.gae_lambda = parse_double(kv);
        else if (k == "clip_eps") b.clip_eps = parse_double(kv);
        else if (k == "inner_clip_form") {
          if (kv.value == "delta") b.inner_form = InnerClipForm::kDelta;
          else if (kv.value == "rho") b.inner_form = InnerClipForm::kRho;
          else throw ConfigError(kv.line, kv.col, "inner_clip_form must be delta or rho");
        } else if (k == "inner_delta") b.inner_delta = parse_double(kv);
        else if (k == "inner_rho") b.inner_rho = parse_double(kv);
        else if (k == "kl_threshold_d") b.kl_threshold_d = parse_double(kv);
        else if (k == "alpha_scale_k") b.alpha_scale_k = parse_double(kv);
        else if (k == "alpha") b.alpha_init = parse_double(kv);
        else if (k == "learning_rate") b.learning_rate = parse_double(kv);
        else if (k == "n_envs") b.n_envs = parse_int(kv);
        else if (k == "unroll_len") b.unroll_len = parse_int(kv);
        else if (k == "n_epochs") b.n_epochs = parse_int(kv);
        else if (k == "n_minibatches") b.n_minibatches = parse_int(kv);
        else if (k == "total_timesteps") b.total_timesteps = parse_ll(kv);
        else if (k == "entropy_coef") b.entropy_coef = parse_double(kv);
        else if (k == "value_coef") b.value_coef = parse_double(kv);
        else if (k == "max_grad_norm") b.max_grad_norm = parse_double(kv);
        else if (k == "normalize_advantages") b.normalize_advantages = parse_bool(kv);
        else if (k == "advisor_alpha_w") b.advisor_alpha_w = parse_double(kv);
        else if (k == "a2d_mix_lambda") b.a2d_mix_lambda = parse_double(kv);
        else if (k == "encoder") b.encoder = parse_int_list(kv);
        else if (k == "action_decoder") b.action_decoder = parse_int_list(kv);
        else if (k == "value_decoder") b.value_decoder = parse_int_list(kv);
        else if (k == "activation") b.activation = activation_from_name(kv.value);
        else if (k == "log_std_min") b.log_std_min = parse_double(kv);
        else if (k == "log_std_max") b.log_std_max = parse_double(kv);
        else throw ConfigError(kv.line, kv.col, "unknown key 'train." + k + "'");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(kv.line, kv.col, e.what());
    }
  }
  return config;
}

ExperimentConfig parse_experiment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_text(buf.str());
}

}  // namespace gpo
