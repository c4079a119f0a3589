#include "gpo/dist.hpp"

#include <cmath>
#include <stdexcept>

namespace gpo {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

int action_index(const Eigen::VectorXd& a, int n) {
  int idx = static_cast<int>(std::llround(a(0)));
  if (idx < 0 || idx >= n) throw std::invalid_argument("categorical action index out of range");
  return idx;
}

void require_same_family(const ActionDist& p, const ActionDist& q) {
  if (p.kind != q.kind) throw std::invalid_argument("distribution kind mismatch");
  if (p.kind == DistKind::kCategorical) {
    if (p.probs.size() != q.probs.size())
      throw std::invalid_argument("categorical dimension mismatch");
  } else {
    if (p.mean.size() != q.mean.size())
      throw std::invalid_argument("gaussian dimension mismatch");
  }
}
}  // namespace

ActionDist ActionDist::categorical(Eigen::VectorXd probs) {
  ActionDist d;
  d.kind = DistKind::kCategorical;
  d.probs = std::move(probs);
  return d;
}

ActionDist ActionDist::diag_gaussian(Eigen::VectorXd mean, Eigen::VectorXd log_std) {
  ActionDist d;
  d.kind = DistKind::kDiagGaussian;
  d.mean = std::move(mean);
  d.log_std = std::move(log_std);
  return d;
}

double dist_logprob(const ActionDist& d, const Eigen::VectorXd& a) {
  if (d.kind == DistKind::kCategorical) {
    return std::log(d.probs(action_index(a, static_cast<int>(d.probs.size()))));
  }
  if (a.size() != d.mean.size()) throw std::invalid_argument("gaussian action dimension mismatch");
  double lp = 0.0;
  for (Eigen::Index j = 0; j < d.mean.size(); ++j) {
    double z = (a(j) - d.mean(j)) * std::exp(-1.0 * d.log_std(j));
    lp += (-0.5 * (z * z) - d.log_std(j)) - 0.5 * kLog2Pi;
  }
  return lp;
}

Eigen::VectorXd dist_sample(const ActionDist& d, Rng& rng) {
  if (d.kind == DistKind::kCategorical) {
    double u = rng.uniform();
    double acc = 0.0;
    int n = static_cast<int>(d.probs.size());
    for (int i = 0; i < n; ++i) {
      acc += d.probs(i);
      if (u < acc) return Eigen::VectorXd::Constant(1, static_cast<double>(i));
    }
    return Eigen::VectorXd::Constant(1, static_cast<double>(n - 1));
  }
  Eigen::VectorXd a(d.mean.size());
  for (Eigen::Index j = 0; j < d.mean.size(); ++j)
    a(j) = d.mean(j) + std::exp(d.log_std(j)) * rng.normal();
  return a;
}

Eigen::VectorXd dist_mode(const ActionDist& d) {
  if (d.kind == DistKind::kCategorical) {
    Eigen::Index best = 0;
    d.probs.maxCoeff(&best);
    return Eigen::VectorXd::Constant(1, static_cast<double>(best));
  }
  return d.mean;
}

double dist_entropy(const ActionDist& d) {
  if (d.kind == DistKind::kCategorical) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < d.probs.size(); ++i) h -= d.probs(i) * std::log(d.probs(i));
    return h;
  }
  double h = 0.0;
  for (Eigen::Index j = 0; j < d.log_std.size(); ++j) h += d.log_std(j) + 0.5 * (1.0 + kLog2Pi);
  return h;
}

double dist_kl(const ActionDist& p, const ActionDist& q) {
  require_same_family(p, q);
  if (p.kind == DistKind::kCategorical) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < p.probs.size(); ++i)
      kl += p.probs(i) * (std::log(p.probs(i)) - std::log(q.probs(i)));
    return kl;
  }
  double kl = 0.0;
  for (Eigen::Index j = 0; j < p.mean.size(); ++j) {
    double var_p = std::exp(2.0 * p.log_std(j));
    double dm = p.mean(j) - q.mean(j);
    kl += (q.log_std(j) - p.log_std(j)) +
          (var_p + dm * dm) * (0.5 * std::exp(-2.0 * q.log_std(j))) - 0.5;
  }
  return kl;
}

ad::Var batch_logprob(ad::Tape& t, const DistBatch& d, const Eigen::MatrixXd& actions) {
  if (actions.rows() != d.rows) throw std::invalid_argument("batch_logprob: row mismatch");
  if (d.kind == DistKind::kCategorical) {
    int n = static_cast<int>(t.value(d.probs).cols());
    std::vector<int> idx(static_cast<size_t>(actions.rows()));
    for (Eigen::Index i = 0; i < actions.rows(); ++i) {
      int a = static_cast<int>(std::llround(actions(i, 0)));
      if (a < 0 || a >= n) throw std::invalid_argument("batch_logprob: action index out of range");
      idx[static_cast<size_t>(i)] = a;
    }
    return t.select_col(d.log_probs, std::move(idx));
  }
  ad::Var a = t.constant(actions);
  ad::Var diff = t.sub(a, d.mean);
  ad::Var inv_sigma = t.exp(t.scale(d.log_std, -1.0));
  ad::Var z2 = t.square(t.mul(diff, inv_sigma));
  ad::Var per_dim = t.add_scalar(t.sub(t.scale(z2, -0.5), d.log_std), -0.5 * kLog2Pi);
  return t.row_sum(per_dim);
}

ad::Var batch_entropy(ad::Tape& t, const DistBatch& d) {
  if (d.kind == DistKind::kCategorical) {
    return t.scale(t.row_sum(t.mul(d.probs, d.log_probs)), -1.0);
  }
  return t.row_sum(t.add_scalar(d.log_std, 0.5 * (1.0 + kLog2Pi)));
}

ad::Var batch_kl(ad::Tape& t, const DistBatch& p, const DistBatch& q) {
  if (p.kind != q.kind) throw std::invalid_argument("batch_kl: distribution kind mismatch");
  if (p.kind == DistKind::kCategorical) {
    return t.row_sum(t.mul(p.probs, t.sub(p.log_probs, q.log_probs)));
  }
  ad::Var log_ratio = t.sub(q.log_std, p.log_std);
  ad::Var var_p = t.exp(t.scale(p.log_std, 2.0));
  ad::Var dm2 = t.square(t.sub(p.mean, q.mean));
  ad::Var inv_2var_q = t.scale(t.exp(t.scale(q.log_std, -2.0)), 0.5);
  ad::Var per_dim = t.add_scalar(t.add(log_ratio, t.mul(t.add(var_p, dm2), inv_2var_q)), -0.5);
  return t.row_sum(per_dim);
}

DistBatch batch_stop_gradient(ad::Tape& t, const DistBatch& d) {
  DistBatch s = d;
  if (d.kind == DistKind::kCategorical) {
    s.probs = t.stop_gradient(d.probs);
    s.log_probs = t.stop_gradient(d.log_probs);
  } else {
    s.mean = t.stop_gradient(d.mean);
    s.log_std = t.stop_gradient(d.log_std);
  }
  return s;
}

ActionDist dist_from_batch_row(const ad::Tape& t, const DistBatch& d, int row) {
  if (d.kind == DistKind::kCategorical) {
    return ActionDist::categorical(t.value(d.probs).row(row).transpose());
  }
  return ActionDist::diag_gaussian(t.value(d.mean).row(row).transpose(),
                                   t.value(d.log_std).row(row).transpose());
}

}  // namespace gpo
