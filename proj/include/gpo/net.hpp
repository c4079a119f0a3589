#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "gpo/dist.hpp"
#include "gpo/rng.hpp"
#include "gpo/tape.hpp"

namespace gpo {

enum class Activation { kLeakyRelu, kTanh, kSilu };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

struct HeadSpec {
  enum Kind { kLinear, kCategorical, kDiagGaussian };
  Kind kind = kLinear;
  int n = 0;  // n_actions (categorical) or action_dim (gaussian)

  // Width of the final linear layer feeding this head.
  int out_width() const;
};

/// Plain dense network description. layer_sizes runs input to output and the
/// final entry must match the head width (n_actions for a categorical head,
/// 2*action_dim for a diagonal Gaussian carrying mean and log-std).
///
/// Parameter layout, in order per layer: weight matrix W (in x out) flattened
/// column-major, then bias (out). All values are doubles.
struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::kLeakyRelu;
  HeadSpec head;

  void validate() const;
  int param_count() const;
};

/// Shared policy/value network: a common encoder trunk feeding an action
/// decoder with a distribution head and a value decoder with a scalar head.
/// The guider and the learner run the same parameters and are told apart
/// purely by the input convention (see guider_input / learner_input).
///
/// Parameter layout: encoder layers, action decoder layers, value decoder
/// layers, then (if enabled) the auxiliary imitation head's final layer.
/// Each layer stores W (in x out) column-major followed by its bias.
struct PolicyNetSpec {
  int input_dim = 0;
  std::vector<int> encoder{128};
  std::vector<int> action_decoder{128};
  std::vector<int> value_decoder{128};
  Activation activation = Activation::kLeakyRelu;
  HeadSpec head;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  double prob_floor = 1e-8;
  bool aux_head = false;  // extra imitation head sharing the trunk

  void validate() const;
  int param_count() const;
  int encoder_out() const;
  std::string canonical() const;            // compact round-trippable string
  static PolicyNetSpec from_canonical(const std::string& s);
};

// Orthogonal-style init: gain sqrt(2) on hidden layers, 0.01 on the action
// head's final layer, 1.0 on the value head's final layer, zero biases.
Eigen::VectorXd init_params(const PolicyNetSpec& spec, Rng& rng);

// Input convention for the shared network: o_g = [s, o, 1], o_l = [0, o, 0].
Eigen::VectorXd guider_input(const Eigen::VectorXd& s, const Eigen::VectorXd& o);
Eigen::VectorXd learner_input(int state_dim, const Eigen::VectorXd& o);

/// Network bound to a tape: parameters are registered as tape leaves so that
/// losses built on top of the forward passes can be differentiated. grad()
/// gathers the flat gradient after Tape::backward.
class BoundNet {
 public:
  BoundNet(ad::Tape& tape, const PolicyNetSpec& spec, const Eigen::VectorXd& params);

  ad::Var trunk(const Eigen::MatrixXd& x) const;
  DistBatch policy_head(ad::Var trunk_out) const;
  ad::Var value_head(ad::Var trunk_out) const;  // n x 1
  DistBatch aux_policy_head(ad::Var trunk_out) const;

  DistBatch policy(const Eigen::MatrixXd& x) const;
  ad::Var value(const Eigen::MatrixXd& x) const;

  Eigen::VectorXd grad() const;  // flat, same layout as params

 private:
  struct Layer {
    ad::Var w;
    ad::Var b;
  };
  DistBatch head_from_raw(ad::Var raw) const;
  ad::Var run_layers(ad::Var h, const std::vector<Layer>& layers, bool activate_last) const;

  ad::Tape& tape_;
  const PolicyNetSpec& spec_;
  std::vector<Layer> encoder_, action_dec_, value_dec_, aux_;
};

// Gradient-free forward passes used by rollout collection and evaluation.
// These run the exact computation of the tape path on a single row.
ActionDist policy_dist(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                       const Eigen::VectorXd& input);
double value_estimate(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                      const Eigen::VectorXd& input);

// Convenience wrapper for gradient checks and small experiments: evaluates
// loss_fn on a fresh tape and returns (loss, gradient w.r.t. params).
using LossFn = std::function<ad::Var(ad::Tape&, BoundNet&)>;
std::pair<double, Eigen::VectorXd> value_and_grad(const PolicyNetSpec& spec,
                                                  const Eigen::VectorXd& params,
                                                  const LossFn& loss_fn);

}  // namespace gpo
