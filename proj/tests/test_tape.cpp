#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gpo/rng.hpp"
#include "gpo/tape.hpp"

using namespace gpo;
using ad::Tape;
using ad::Var;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Central-difference gradient of a scalar-valued builder over one leaf.
Eigen::MatrixXd fd_gradient(const std::function<double(const Eigen::MatrixXd&)>& f,
                            Eigen::MatrixXd x, double h = 1e-6) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      double keep = x(i, j);
      x(i, j) = keep + h;
      double up = f(x);
      x(i, j) = keep - h;
      double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

void check_unary(const std::function<Var(Tape&, Var)>& op, const Eigen::MatrixXd& x0,
                 double tol = 1e-6) {
  Tape tape;
  Var x = tape.input(x0);
  Var loss = tape.sum(op(tape, x));
  tape.backward(loss);
  Eigen::MatrixXd ad_grad = tape.grad(x);
  Eigen::MatrixXd fd = fd_gradient(
      [&](const Eigen::MatrixXd& xv) {
        Tape t2;
        Var v = t2.input(xv);
        return t2.value(t2.sum(op(t2, v)))(0, 0);
      },
      x0);
  CHECK((ad_grad - fd).cwiseAbs().maxCoeff() < tol);
}

}  // namespace

TEST_CASE("quadratic gradient is 2p") {
  Rng rng(1);
  Eigen::MatrixXd p0 = random_matrix(3, 4, rng);
  Tape tape;
  Var p = tape.input(p0);
  Var loss = tape.sum(tape.square(p));
  tape.backward(loss);
  CHECK((tape.grad(p) - 2.0 * p0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stop_gradient: f frozen, g live in stop(f(p)) * g(p)") {
  Rng rng(2);
  Eigen::MatrixXd p0 = random_matrix(2, 3, rng);
  Tape tape;
  Var p = tape.input(p0);
  Var f = tape.exp(p);
  Var g = tape.square(p);
  Var loss = tape.sum(tape.mul(tape.stop_gradient(f), g));
  tape.backward(loss);
  // d/dp [ stop(e^p) * p^2 ] = e^p * 2p with e^p treated as a constant
  Eigen::MatrixXd expected = p0.array().exp() * 2.0 * p0.array();
  CHECK((tape.grad(p) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stop_gradient blocks the frozen side entirely") {
  Rng rng(3);
  Eigen::MatrixXd a0 = random_matrix(2, 2, rng);
  Tape tape;
  Var a = tape.input(a0);
  Var loss = tape.sum(tape.stop_gradient(tape.square(a)));
  tape.backward(loss);
  CHECK(tape.grad(a).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("primitive gradients match central differences") {
  Rng rng(4);
  Eigen::MatrixXd x0 = random_matrix(4, 5, rng, 0.8);
  check_unary([](Tape& t, Var x) { return t.leaky_relu(x, 0.01); }, x0, 1e-5);
}

TEST_CASE("unary primitive sweep") {
  Rng rng(5);
  Eigen::MatrixXd x0 = random_matrix(4, 5, rng, 0.8);
  check_unary([](Tape& t, Var x) { return t.tanh(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.silu(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.exp(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.square(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.softmax(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.row_normalize(t.exp(x)); }, x0);
  check_unary([](Tape& t, Var x) { return t.mean(x); }, x0);
  check_unary([](Tape& t, Var x) { return t.row_sum(t.scale(x, 1.7)); }, x0);
  Eigen::MatrixXd positive = x0.array().abs() + 0.5;
  check_unary([](Tape& t, Var x) { return t.log(x); }, positive);
}

TEST_CASE("clip passes gradient inside, zero outside") {
  Eigen::MatrixXd x0(1, 4);
  x0 << -2.0, 0.3, 0.9, 1.8;
  Tape tape;
  Var x = tape.input(x0);
  Var loss = tape.sum(tape.clip(x, 0.0, 1.0));
  tape.backward(loss);
  Eigen::MatrixXd g = tape.grad(x);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(0, 2) == 1.0);
  CHECK(g(0, 3) == 0.0);
}

TEST_CASE("min routes gradient to the smaller argument") {
  Eigen::MatrixXd a0(1, 2), b0(1, 2);
  a0 << 1.0, 5.0;
  b0 << 2.0, 3.0;
  Tape tape;
  Var a = tape.input(a0);
  Var b = tape.input(b0);
  tape.backward(tape.sum(tape.min(a, b)));
  CHECK(tape.grad(a)(0, 0) == 1.0);
  CHECK(tape.grad(a)(0, 1) == 0.0);
  CHECK(tape.grad(b)(0, 0) == 0.0);
  CHECK(tape.grad(b)(0, 1) == 1.0);
}

TEST_CASE("affine gradients match finite differences") {
  Rng rng(6);
  Eigen::MatrixXd x0 = random_matrix(5, 3, rng);
  Eigen::MatrixXd w0 = random_matrix(3, 4, rng);
  Eigen::MatrixXd b0 = random_matrix(4, 1, rng);
  auto loss_val = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                      const Eigen::MatrixXd& b) {
    Tape t;
    return t.value(t.sum(t.square(t.affine(t.input(x), t.input(w), t.input(b)))))(0, 0);
  };
  Tape tape;
  Var x = tape.input(x0), w = tape.input(w0), b = tape.input(b0);
  tape.backward(tape.sum(tape.square(tape.affine(x, w, b))));
  Eigen::MatrixXd fd_w = fd_gradient([&](const Eigen::MatrixXd& wv) { return loss_val(x0, wv, b0); }, w0);
  Eigen::MatrixXd fd_x = fd_gradient([&](const Eigen::MatrixXd& xv) { return loss_val(xv, w0, b0); }, x0);
  Eigen::MatrixXd fd_b = fd_gradient([&](const Eigen::MatrixXd& bv) { return loss_val(x0, w0, bv); }, b0);
  CHECK((tape.grad(w) - fd_w).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((tape.grad(x) - fd_x).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((tape.grad(b) - fd_b).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("select_col gathers and scatters") {
  Eigen::MatrixXd x0(3, 3);
  x0 << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  Tape tape;
  Var x = tape.input(x0);
  Var picked = tape.select_col(x, {2, 0, 1});
  CHECK(tape.value(picked)(0, 0) == 3.0);
  CHECK(tape.value(picked)(1, 0) == 4.0);
  CHECK(tape.value(picked)(2, 0) == 8.0);
  tape.backward(tape.sum(picked));
  Eigen::MatrixXd g = tape.grad(x);
  CHECK(g(0, 2) == 1.0);
  CHECK(g(1, 0) == 1.0);
  CHECK(g(2, 1) == 1.0);
  CHECK(g.sum() == 3.0);
}

TEST_CASE("non-finite intermediate names the primitive") {
  Tape tape;
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 1);
  Var x = tape.input(zero);
  try {
    tape.log(x);  // log(0) = -inf
    FAIL("expected NonFiniteError");
  } catch (const ad::NonFiniteError& e) {
    CHECK(e.primitive == "log");
  }
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  Var a = tape.input(Eigen::MatrixXd::Zero(2, 2));
  Var b = tape.input(Eigen::MatrixXd::Zero(3, 2));
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.affine(a, b, a), std::invalid_argument);
}
