#pragma once

#include <Eigen/Core>

#include "gpo/rng.hpp"
#include "gpo/tape.hpp"

namespace gpo {

enum class DistKind { kCategorical, kDiagGaussian };

/// Action distribution for a single decision. Categorical distributions hold
/// strictly positive probabilities summing to 1; Gaussians hold a mean and a
/// clamped log standard deviation per dimension.
struct ActionDist {
  DistKind kind = DistKind::kCategorical;
  Eigen::VectorXd probs;      // categorical
  Eigen::VectorXd mean;       // diag_gaussian
  Eigen::VectorXd log_std;    // diag_gaussian

  static ActionDist categorical(Eigen::VectorXd probs);
  static ActionDist diag_gaussian(Eigen::VectorXd mean, Eigen::VectorXd log_std);
};

// For categorical distributions the action vector holds the index in a[0].
double dist_logprob(const ActionDist& d, const Eigen::VectorXd& a);
Eigen::VectorXd dist_sample(const ActionDist& d, Rng& rng);
Eigen::VectorXd dist_mode(const ActionDist& d);
double dist_entropy(const ActionDist& d);
double dist_kl(const ActionDist& p, const ActionDist& q);

/// Batched distribution living on a tape: one row per sample.
struct DistBatch {
  DistKind kind = DistKind::kCategorical;
  ad::Var probs;      // n x n_actions
  ad::Var log_probs;  // n x n_actions, cached log of probs
  ad::Var mean;       // n x d
  ad::Var log_std;    // n x d
  int rows = 0;
};

// Per-sample quantities, all n x 1 columns. Actions are passed as an
// n x adim constant matrix (categorical: index in column 0).
ad::Var batch_logprob(ad::Tape& t, const DistBatch& d, const Eigen::MatrixXd& actions);
ad::Var batch_entropy(ad::Tape& t, const DistBatch& d);
ad::Var batch_kl(ad::Tape& t, const DistBatch& p, const DistBatch& q);
DistBatch batch_stop_gradient(ad::Tape& t, const DistBatch& d);

// Row i of a DistBatch as a runtime distribution.
ActionDist dist_from_batch_row(const ad::Tape& t, const DistBatch& d, int row);

}  // namespace gpo
