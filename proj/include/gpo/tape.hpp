#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpo::ad {

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Thrown when a primitive produces a non-finite value. Carries the name of
// the offending primitive.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& op)
      : std::runtime_error("non-finite value produced by primitive '" + op + "'"),
        primitive(op) {}
  std::string primitive;
};

/// Reverse-mode tape over Eigen double matrices.
///
/// Supported primitives: affine, leaky_relu / tanh / silu, rowwise softmax,
/// log, exp, square, clip (zero gradient outside the interval), elementwise
/// min, elementwise arithmetic, sum / mean / row_sum reductions,
/// stop_gradient, and column gather / slice for batch bookkeeping. Every
/// primitive validates that its output is finite.
class Tape {
 public:
  Tape() { nodes_.reserve(64); }

  // Leaves.
  Var input(Eigen::MatrixXd v);     // participates in gradients
  Var constant(Eigen::MatrixXd v);  // treated as data

  // Affine map: x (n x in) * w (in x out) + b (out x 1), bias broadcast
  // across rows.
  Var affine(Var x, Var w, Var b);
  // Fused affine followed by a nonlinearity; saves a full activation pass
  // over the batch on both sweeps.
  enum class Fused : uint8_t { kLeakyRelu, kTanh, kSilu };
  Var affine_act(Var x, Var w, Var b, Fused activation, double negative_slope = 0.01);

  Var leaky_relu(Var x, double negative_slope);
  Var tanh(Var x);
  Var silu(Var x);
  Var softmax(Var x);  // rowwise
  Var log(Var x);
  Var exp(Var x);
  Var square(Var x);
  // Clamp to [lo, hi]; gradient is zero outside the interval.
  Var clip(Var x, double lo, double hi);
  Var min(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var sum(Var x);   // 1 x 1
  Var mean(Var x);  // 1 x 1
  Var row_sum(Var x);  // n x 1
  Var row_normalize(Var x);  // x / rowwise sum, rows must sum to > 0
  Var stop_gradient(Var x);
  // Gathers x(i, cols[i]) into an n x 1 column.
  Var select_col(Var x, std::vector<int> cols);
  Var slice_cols(Var x, int first, int count);

  const Eigen::MatrixXd& value(Var v) const { return node(v.id).val; }
  bool needs_grad(Var v) const { return node(v.id).needs_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Reverse sweep from a 1x1 scalar node. Gradients accumulate on every
  // node with needs_grad; query them with grad().
  void backward(Var scalar);

  // Gradient of the last backward() target w.r.t. a node. Zero matrix if the
  // node was not reached.
  Eigen::MatrixXd grad(Var v) const;

 private:
  enum class Op : uint8_t {
    kInput, kConstant, kAffine, kAffineAct, kLeakyRelu, kTanh, kSilu, kSoftmax,
    kLog, kExp, kSquare, kClip, kMin, kAdd, kSub, kMul, kScale, kAddScalar,
    kSum, kMean, kRowSum, kRowNormalize, kStopGradient, kSelectCol, kSliceCols,
  };

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;
    double p0 = 0.0, p1 = 0.0;
    std::vector<int> cols;
    Eigen::MatrixXd val;
    Eigen::MatrixXd grad;
    Eigen::MatrixXd aux;  // pre-activation cache for fused silu
    bool needs_grad = false;
    bool grad_alloc = false;
  };

  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

  Var push(Node n, const char* op_name);
  Var push_unchecked(Node n);
  void accumulate(int id, const Eigen::MatrixXd& g);
  Eigen::MatrixXd& grad_buf(int id);

  std::vector<Node> nodes_;
};

}  // namespace gpo::ad
