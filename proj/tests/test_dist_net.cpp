#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gpo/net.hpp"

using namespace gpo;

namespace {

PolicyNetSpec small_spec(HeadSpec head) {
  PolicyNetSpec spec;
  spec.input_dim = 5;
  spec.encoder = {6};
  spec.action_decoder = {4};
  spec.value_decoder = {4};
  spec.head = head;
  return spec;
}

// Straight-line reference evaluator: walks the documented flat layout with
// explicit loops, independent of the production forward path.
Eigen::VectorXd reference_forward(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                                  const Eigen::VectorXd& input, bool value_branch) {
  auto layer = [&](const Eigen::VectorXd& x, int offset, int in, int out, bool act) {
    Eigen::VectorXd y(out);
    for (int j = 0; j < out; ++j) {
      double acc = params(offset + in * out + j);  // bias
      for (int i = 0; i < in; ++i) acc += x(i) * params(offset + j * in + i);
      if (act) acc = acc >= 0.0 ? acc : 0.01 * acc;
      y(j) = acc;
    }
    return y;
  };
  int offset = 0;
  Eigen::VectorXd h = input;
  int prev = spec.input_dim;
  for (int width : spec.encoder) {
    h = layer(h, offset, prev, width, true);
    offset += prev * width + width;
    prev = width;
  }
  int enc_out = prev;
  Eigen::VectorXd a = h;
  for (int width : spec.action_decoder) {
    a = layer(a, offset, prev, width, true);
    offset += prev * width + width;
    prev = width;
  }
  int head_w = spec.head.out_width();
  a = layer(a, offset, prev, head_w, false);
  offset += prev * head_w + head_w;
  if (!value_branch) return a;
  prev = enc_out;
  Eigen::VectorXd v = h;
  for (int width : spec.value_decoder) {
    v = layer(v, offset, prev, width, true);
    offset += prev * width + width;
    prev = width;
  }
  return layer(v, offset, prev, 1, false);
}

}  // namespace

TEST_CASE("zero params give uniform categorical and zero value") {
  PolicyNetSpec spec = small_spec({HeadSpec::kCategorical, 3});
  Eigen::VectorXd params = Eigen::VectorXd::Zero(spec.param_count());
  Eigen::VectorXd x = Eigen::VectorXd::Ones(5);
  ActionDist d = policy_dist(spec, params, x);
  for (int i = 0; i < 3; ++i) CHECK(d.probs(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(value_estimate(spec, params, x) == 0.0);
}

TEST_CASE("forward matches a straight-line reference on random params") {
  PolicyNetSpec spec = small_spec({HeadSpec::kCategorical, 3});
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd params(spec.param_count());
    for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = rng.normal();
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x(i) = rng.normal();

    Eigen::VectorXd raw = reference_forward(spec, params, x, false);
    double m = raw.maxCoeff();
    Eigen::VectorXd e = (raw.array() - m).exp();
    Eigen::VectorXd probs = e / e.sum();
    probs = probs.array().max(spec.prob_floor).min(1.0);
    probs /= probs.sum();

    ActionDist d = policy_dist(spec, params, x);
    CHECK((d.probs - probs).cwiseAbs().maxCoeff() < 1e-12);
    double v_ref = reference_forward(spec, params, x, true)(0);
    CHECK(value_estimate(spec, params, x) == doctest::Approx(v_ref).epsilon(1e-12));
  }
}

TEST_CASE("tape forward equals the gradient-free forward") {
  PolicyNetSpec spec = small_spec({HeadSpec::kDiagGaussian, 2});
  Rng rng(12);
  Eigen::VectorXd params = init_params(spec, rng);
  Eigen::MatrixXd batch(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) batch(i, j) = rng.normal();

  ad::Tape tape;
  BoundNet net(tape, spec, params);
  DistBatch d = net.policy(batch);
  ad::Var v = net.value(batch);
  for (int i = 0; i < 3; ++i) {
    ActionDist row = policy_dist(spec, params, batch.row(i).transpose());
    CHECK((tape.value(d.mean).row(i).transpose() - row.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((tape.value(d.log_std).row(i).transpose() - row.log_std).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(tape.value(v)(i, 0) ==
          doctest::Approx(value_estimate(spec, params, batch.row(i).transpose())).epsilon(1e-12));
  }
}

TEST_CASE("dimension mismatch is a contract violation") {
  PolicyNetSpec spec = small_spec({HeadSpec::kCategorical, 3});
  Eigen::VectorXd params = Eigen::VectorXd::Zero(spec.param_count());
  CHECK_THROWS_AS(policy_dist(spec, params, Eigen::VectorXd::Zero(4)), std::invalid_argument);
  ad::Tape tape;
  CHECK_THROWS_AS((BoundNet{tape, spec, Eigen::VectorXd::Zero(3)}), std::invalid_argument);
}

TEST_CASE("categorical probabilities sum to one after the floor") {
  PolicyNetSpec spec = small_spec({HeadSpec::kCategorical, 4});
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd params(spec.param_count());
    for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = 3.0 * rng.normal();
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x(i) = 2.0 * rng.normal();
    ActionDist d = policy_dist(spec, params, x);
    CHECK(std::abs(d.probs.sum() - 1.0) < 1e-9);
    CHECK(d.probs.minCoeff() > 0.0);
  }
}

TEST_CASE("gaussian log-std stays within the configured range") {
  PolicyNetSpec spec = small_spec({HeadSpec::kDiagGaussian, 2});
  Rng rng(14);
  Eigen::VectorXd params(spec.param_count());
  for (Eigen::Index i = 0; i < params.size(); ++i) params(i) = 10.0 * rng.normal();
  Eigen::VectorXd x = Eigen::VectorXd::Ones(5) * 3.0;
  ActionDist d = policy_dist(spec, params, x);
  CHECK(d.log_std.minCoeff() >= spec.log_std_min);
  CHECK(d.log_std.maxCoeff() <= spec.log_std_max);
}

TEST_CASE("distribution basics") {
  ActionDist p = ActionDist::categorical((Eigen::VectorXd(2) << 0.5, 0.5).finished());
  ActionDist q = ActionDist::categorical((Eigen::VectorXd(2) << 0.5, 0.5).finished());
  CHECK(dist_kl(p, q) == doctest::Approx(0.0).epsilon(1e-12));

  // KL(p || uniform) = log n - H(p), by direct summation
  Eigen::VectorXd pv(4);
  pv << 0.4, 0.3, 0.2, 0.1;
  ActionDist biased = ActionDist::categorical(pv);
  ActionDist uniform = ActionDist::categorical(Eigen::VectorXd::Constant(4, 0.25));
  double direct = 0.0;
  for (int i = 0; i < 4; ++i) direct += pv(i) * std::log(pv(i) / 0.25);
  CHECK(dist_kl(biased, uniform) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(dist_kl(biased, uniform) ==
        doctest::Approx(std::log(4.0) - dist_entropy(biased)).epsilon(1e-12));

  // one-dimensional gaussians: means 0/1, stds 1/1 -> KL = 0.5
  ActionDist g0 = ActionDist::diag_gaussian(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1));
  ActionDist g1 = ActionDist::diag_gaussian(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1));
  CHECK(dist_kl(g0, g1) == doctest::Approx(0.5).epsilon(1e-14));

  CHECK_THROWS_AS(dist_kl(p, g0), std::invalid_argument);
}

TEST_CASE("kl is zero iff parameters coincide") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd logits(3);
    for (int i = 0; i < 3; ++i) logits(i) = rng.normal();
    Eigen::VectorXd probs = (logits.array() - logits.maxCoeff()).exp();
    probs /= probs.sum();
    ActionDist p = ActionDist::categorical(probs);
    CHECK(dist_kl(p, p) <= 1e-12);

    Eigen::VectorXd nudged = probs;
    nudged(0) += 1e-9;
    nudged /= nudged.sum();
    CHECK(dist_kl(p, ActionDist::categorical(nudged)) < 1e-12);

    Eigen::VectorXd moved = probs;
    moved(0) += 1e-3;
    moved /= moved.sum();
    CHECK(dist_kl(p, ActionDist::categorical(moved)) > 1e-12);
  }
}

TEST_CASE("sampling is reproducible bit-for-bit") {
  ActionDist g = ActionDist::diag_gaussian((Eigen::VectorXd(2) << 0.3, -0.7).finished(),
                                           (Eigen::VectorXd(2) << -0.2, 0.1).finished());
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd sa = dist_sample(g, a), sb = dist_sample(g, b);
    CHECK(sa(0) == sb(0));
    CHECK(sa(1) == sb(1));
  }
  ActionDist c = ActionDist::categorical((Eigen::VectorXd(3) << 0.2, 0.5, 0.3).finished());
  Rng a2(7), b2(7);
  for (int i = 0; i < 100; ++i) CHECK(dist_sample(c, a2)(0) == dist_sample(c, b2)(0));
}

TEST_CASE("guider and learner input convention") {
  Eigen::VectorXd s(2), o(3);
  s << 0.5, -1.0;
  o << 1.0, 2.0, 3.0;
  Eigen::VectorXd og = guider_input(s, o);
  Eigen::VectorXd ol = learner_input(2, o);
  REQUIRE(og.size() == 6);
  REQUIRE(ol.size() == 6);
  CHECK(og(0) == 0.5);
  CHECK(og(1) == -1.0);
  CHECK(og(2) == 1.0);
  CHECK(og(5) == 1.0);
  CHECK(ol(0) == 0.0);
  CHECK(ol(1) == 0.0);
  CHECK(ol(2) == 1.0);
  CHECK(ol(5) == 0.0);
}

TEST_CASE("net spec round-trips through the canonical string") {
  PolicyNetSpec spec = small_spec({HeadSpec::kDiagGaussian, 2});
  spec.encoder = {6, 7};
  spec.aux_head = true;
  PolicyNetSpec back = PolicyNetSpec::from_canonical(spec.canonical());
  CHECK(back.canonical() == spec.canonical());
  CHECK(back.param_count() == spec.param_count());
}

TEST_CASE("batched dist ops agree with the scalar ones") {
  PolicyNetSpec spec = small_spec({HeadSpec::kCategorical, 3});
  Rng rng(16);
  Eigen::VectorXd params = init_params(spec, rng);
  Eigen::MatrixXd batch(4, 5);
  Eigen::MatrixXd actions(4, 1);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 5; ++j) batch(i, j) = rng.normal();
    actions(i, 0) = i % 3;
  }
  ad::Tape tape;
  BoundNet net(tape, spec, params);
  DistBatch d = net.policy(batch);
  Eigen::VectorXd lp = tape.value(batch_logprob(tape, d, actions)).col(0);
  Eigen::VectorXd ent = tape.value(batch_entropy(tape, d)).col(0);
  for (int i = 0; i < 4; ++i) {
    ActionDist row = policy_dist(spec, params, batch.row(i).transpose());
    CHECK(lp(i) == doctest::Approx(dist_logprob(row, actions.row(i).transpose())).epsilon(1e-12));
    CHECK(ent(i) == doctest::Approx(dist_entropy(row)).epsilon(1e-12));
  }
}
