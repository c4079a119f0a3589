#include "gpo/net.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gpo {

namespace {

struct LayerDims {
  int in = 0, out = 0;
  double gain = 1.0;     // orthogonal init gain
  bool activate = true;  // nonlinearity after this layer
};

// Full layer walk in parameter order: encoder, action decoder, value
// decoder, optional aux head final layer.
std::vector<LayerDims> layer_walk(const PolicyNetSpec& spec) {
  const double hidden_gain = std::sqrt(2.0);
  std::vector<LayerDims> walk;
  int prev = spec.input_dim;
  for (int h : spec.encoder) {
    walk.push_back({prev, h, hidden_gain, true});
    prev = h;
  }
  int enc_out = prev;
  for (int h : spec.action_decoder) {
    walk.push_back({prev, h, hidden_gain, true});
    prev = h;
  }
  walk.push_back({prev, spec.head.out_width(), 0.01, false});  // action head
  prev = enc_out;
  for (int h : spec.value_decoder) {
    walk.push_back({prev, h, hidden_gain, true});
    prev = h;
  }
  walk.push_back({prev, 1, 1.0, false});  // value head
  if (spec.aux_head) walk.push_back({enc_out, spec.head.out_width(), 0.01, false});
  return walk;
}

Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
  int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  q *= gain;
  if (rows >= cols) return q;
  return q.transpose();
}

ad::Tape::Fused fused_activation(Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return ad::Tape::Fused::kLeakyRelu;
    case Activation::kTanh:
      return ad::Tape::Fused::kTanh;
    case Activation::kSilu:
      return ad::Tape::Fused::kSilu;
  }
  throw std::logic_error("unknown activation");
}

void apply_activation_raw(Eigen::RowVectorXd& h, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      h = h.unaryExpr([](double v) { return v >= 0.0 ? v : 0.01 * v; });
      return;
    case Activation::kTanh:
      h = h.array().tanh();
      return;
    case Activation::kSilu:
      h = h.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
      return;
  }
  throw std::logic_error("unknown activation");
}

// Raw single-row forward through a sub-chain of the layer walk.
Eigen::RowVectorXd run_raw(const Eigen::VectorXd& params, const std::vector<LayerDims>& walk,
                           const std::vector<int>& offsets, int first, int count,
                           Eigen::RowVectorXd h, Activation act) {
  for (int l = first; l < first + count; ++l) {
    const LayerDims& d = walk[static_cast<size_t>(l)];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + offsets[static_cast<size_t>(l)], d.in, d.out);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + offsets[static_cast<size_t>(l)] + d.in * d.out, d.out);
    h = (h * w) + b.transpose();
    if (d.activate) apply_activation_raw(h, act);
  }
  return h;
}

std::vector<int> layer_offsets(const std::vector<LayerDims>& walk) {
  std::vector<int> offsets;
  offsets.reserve(walk.size());
  int off = 0;
  for (const auto& d : walk) {
    offsets.push_back(off);
    off += d.in * d.out + d.out;
  }
  return offsets;
}

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "silu") return Activation::kSilu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSilu: return "silu";
  }
  return "?";
}

int HeadSpec::out_width() const {
  switch (kind) {
    case kLinear: return n;
    case kCategorical: return n;
    case kDiagGaussian: return 2 * n;
  }
  return 0;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("MlpSpec: need at least two layer sizes");
  for (int s : layer_sizes)
    if (s < 1) throw std::invalid_argument("MlpSpec: layer sizes must be positive");
  if (head.kind != HeadSpec::kLinear && layer_sizes.back() != head.out_width())
    throw std::invalid_argument("MlpSpec: final layer width does not match head");
}

int MlpSpec::param_count() const {
  int count = 0;
  for (size_t l = 0; l + 1 < layer_sizes.size(); ++l)
    count += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  return count;
}

void PolicyNetSpec::validate() const {
  if (input_dim < 1) throw std::invalid_argument("PolicyNetSpec: input_dim must be positive");
  if (head.kind == HeadSpec::kLinear || head.n < 1)
    throw std::invalid_argument("PolicyNetSpec: head must be categorical or diag_gaussian");
  for (int h : encoder)
    if (h < 1) throw std::invalid_argument("PolicyNetSpec: encoder sizes must be positive");
  for (int h : action_decoder)
    if (h < 1) throw std::invalid_argument("PolicyNetSpec: action decoder sizes must be positive");
  for (int h : value_decoder)
    if (h < 1) throw std::invalid_argument("PolicyNetSpec: value decoder sizes must be positive");
  if (!(log_std_min < log_std_max))
    throw std::invalid_argument("PolicyNetSpec: log_std bounds out of order");
}

int PolicyNetSpec::param_count() const {
  int count = 0;
  for (const auto& d : layer_walk(*this)) count += d.in * d.out + d.out;
  return count;
}

int PolicyNetSpec::encoder_out() const {
  return encoder.empty() ? input_dim : encoder.back();
}

std::string PolicyNetSpec::canonical() const {
  auto join = [](const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
  };
  std::ostringstream os;
  os << "in=" << input_dim << ";enc=" << join(encoder) << ";act=" << join(action_decoder)
     << ";val=" << join(value_decoder) << ";fn=" << activation_name(activation) << ";head="
     << (head.kind == HeadSpec::kCategorical ? "cat" : "gauss") << ":" << head.n
     << ";lsmin=" << log_std_min << ";lsmax=" << log_std_max << ";floor=" << prob_floor
     << ";aux=" << (aux_head ? 1 : 0);
  return os.str();
}

PolicyNetSpec PolicyNetSpec::from_canonical(const std::string& s) {
  auto split = [](const std::string& str, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : str) {
      if (c == sep) {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  };
  auto parse_ints = [&](const std::string& str) {
    std::vector<int> out;
    if (str.empty()) return out;
    for (const auto& tok : split(str, ',')) out.push_back(std::stoi(tok));
    return out;
  };
  PolicyNetSpec spec;
  for (const auto& field : split(s, ';')) {
    auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad net spec string: " + s);
    std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "in") spec.input_dim = std::stoi(val);
    else if (key == "enc") spec.encoder = parse_ints(val);
    else if (key == "act") spec.action_decoder = parse_ints(val);
    else if (key == "val") spec.value_decoder = parse_ints(val);
    else if (key == "fn") spec.activation = activation_from_name(val);
    else if (key == "head") {
      auto colon = val.find(':');
      if (colon == std::string::npos) throw std::invalid_argument("bad head spec: " + val);
      std::string kind = val.substr(0, colon);
      spec.head.kind = kind == "cat" ? HeadSpec::kCategorical : HeadSpec::kDiagGaussian;
      spec.head.n = std::stoi(val.substr(colon + 1));
    } else if (key == "lsmin") spec.log_std_min = std::stod(val);
    else if (key == "lsmax") spec.log_std_max = std::stod(val);
    else if (key == "floor") spec.prob_floor = std::stod(val);
    else if (key == "aux") spec.aux_head = val == "1";
    else throw std::invalid_argument("unknown net spec field '" + key + "'");
  }
  spec.validate();
  return spec;
}

Eigen::VectorXd init_params(const PolicyNetSpec& spec, Rng& rng) {
  spec.validate();
  Eigen::VectorXd params(spec.param_count());
  params.setZero();
  auto walk = layer_walk(spec);
  auto offsets = layer_offsets(walk);
  for (size_t l = 0; l < walk.size(); ++l) {
    const LayerDims& d = walk[l];
    Eigen::MatrixXd w = orthogonal(d.in, d.out, d.gain, rng);
    Eigen::Map<Eigen::MatrixXd>(params.data() + offsets[l], d.in, d.out) = w;
    // biases stay zero
  }
  return params;
}

Eigen::VectorXd guider_input(const Eigen::VectorXd& s, const Eigen::VectorXd& o) {
  Eigen::VectorXd x(s.size() + o.size() + 1);
  x << s, o, 1.0;
  return x;
}

Eigen::VectorXd learner_input(int state_dim, const Eigen::VectorXd& o) {
  Eigen::VectorXd x(state_dim + o.size() + 1);
  x.setZero();
  x.segment(state_dim, o.size()) = o;
  return x;
}

BoundNet::BoundNet(ad::Tape& tape, const PolicyNetSpec& spec, const Eigen::VectorXd& params)
    : tape_(tape), spec_(spec) {
  spec.validate();
  if (params.size() != spec.param_count())
    throw std::invalid_argument("BoundNet: parameter vector length mismatch");
  auto walk = layer_walk(spec);
  auto offsets = layer_offsets(walk);
  std::vector<Layer>* groups[] = {&encoder_, &action_dec_, &value_dec_, &aux_};
  size_t group_sizes[] = {spec.encoder.size(), spec.action_decoder.size() + 1,
                          spec.value_decoder.size() + 1, spec.aux_head ? 1u : 0u};
  size_t l = 0;
  for (int g = 0; g < 4; ++g) {
    for (size_t i = 0; i < group_sizes[g]; ++i, ++l) {
      const LayerDims& d = walk[l];
      Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(params.data() + offsets[l], d.in, d.out);
      Eigen::MatrixXd b = Eigen::Map<const Eigen::VectorXd>(params.data() + offsets[l] + d.in * d.out, d.out);
      groups[g]->push_back({tape_.input(std::move(w)), tape_.input(std::move(b))});
    }
  }
}

ad::Var BoundNet::run_layers(ad::Var h, const std::vector<Layer>& layers, bool activate_last) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i + 1 < layers.size() || activate_last)
      h = tape_.affine_act(h, layers[i].w, layers[i].b, fused_activation(spec_.activation));
    else
      h = tape_.affine(h, layers[i].w, layers[i].b);
  }
  return h;
}

ad::Var BoundNet::trunk(const Eigen::MatrixXd& x) const {
  if (x.cols() != spec_.input_dim) throw std::invalid_argument("BoundNet: input dimension mismatch");
  return run_layers(tape_.constant(x), encoder_, true);
}

DistBatch BoundNet::head_from_raw(ad::Var raw) const {
  DistBatch d;
  d.rows = static_cast<int>(tape_.value(raw).rows());
  if (spec_.head.kind == HeadSpec::kCategorical) {
    d.kind = DistKind::kCategorical;
    ad::Var floored = tape_.clip(tape_.softmax(raw), spec_.prob_floor, 1.0);
    d.probs = tape_.row_normalize(floored);
    d.log_probs = tape_.log(d.probs);
  } else {
    d.kind = DistKind::kDiagGaussian;
    d.mean = tape_.slice_cols(raw, 0, spec_.head.n);
    d.log_std = tape_.clip(tape_.slice_cols(raw, spec_.head.n, spec_.head.n),
                           spec_.log_std_min, spec_.log_std_max);
  }
  return d;
}

DistBatch BoundNet::policy_head(ad::Var trunk_out) const {
  return head_from_raw(run_layers(trunk_out, action_dec_, false));
}

ad::Var BoundNet::value_head(ad::Var trunk_out) const {
  return run_layers(trunk_out, value_dec_, false);
}

DistBatch BoundNet::aux_policy_head(ad::Var trunk_out) const {
  if (!spec_.aux_head) throw std::logic_error("BoundNet: aux head not enabled");
  return head_from_raw(run_layers(trunk_out, aux_, false));
}

DistBatch BoundNet::policy(const Eigen::MatrixXd& x) const { return policy_head(trunk(x)); }

ad::Var BoundNet::value(const Eigen::MatrixXd& x) const { return value_head(trunk(x)); }

Eigen::VectorXd BoundNet::grad() const {
  Eigen::VectorXd g(spec_.param_count());
  int off = 0;
  auto gather = [&](const std::vector<Layer>& layers) {
    for (const auto& layer : layers) {
      Eigen::MatrixXd gw = tape_.grad(layer.w);
      Eigen::MatrixXd gb = tape_.grad(layer.b);
      Eigen::Map<Eigen::MatrixXd>(g.data() + off, gw.rows(), gw.cols()) = gw;
      off += static_cast<int>(gw.size());
      Eigen::Map<Eigen::VectorXd>(g.data() + off, gb.rows()) = gb.col(0);
      off += static_cast<int>(gb.rows());
    }
  };
  gather(encoder_);
  gather(action_dec_);
  gather(value_dec_);
  gather(aux_);
  if (!g.allFinite()) throw ad::NonFiniteError("gradient");
  return g;
}

ActionDist policy_dist(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                       const Eigen::VectorXd& input) {
  if (input.size() != spec.input_dim) throw std::invalid_argument("policy_dist: input dimension mismatch");
  auto walk = layer_walk(spec);
  auto offsets = layer_offsets(walk);
  int n_enc = static_cast<int>(spec.encoder.size());
  int n_act = static_cast<int>(spec.action_decoder.size()) + 1;
  Eigen::RowVectorXd h = run_raw(params, walk, offsets, 0, n_enc, input.transpose(), spec.activation);
  Eigen::RowVectorXd raw = run_raw(params, walk, offsets, n_enc, n_act, h, spec.activation);
  if (spec.head.kind == HeadSpec::kCategorical) {
    double m = raw.maxCoeff();
    Eigen::RowVectorXd e = (raw.array() - m).exp();
    Eigen::VectorXd p = (e / e.sum()).transpose();
    p = p.array().max(spec.prob_floor).min(1.0);
    p /= p.sum();
    return ActionDist::categorical(std::move(p));
  }
  Eigen::VectorXd mean = raw.head(spec.head.n).transpose();
  Eigen::VectorXd log_std =
      raw.segment(spec.head.n, spec.head.n).array().max(spec.log_std_min).min(spec.log_std_max);
  return ActionDist::diag_gaussian(std::move(mean), std::move(log_std));
}

double value_estimate(const PolicyNetSpec& spec, const Eigen::VectorXd& params,
                      const Eigen::VectorXd& input) {
  if (input.size() != spec.input_dim) throw std::invalid_argument("value_estimate: input dimension mismatch");
  auto walk = layer_walk(spec);
  auto offsets = layer_offsets(walk);
  int n_enc = static_cast<int>(spec.encoder.size());
  int n_act = static_cast<int>(spec.action_decoder.size()) + 1;
  int n_val = static_cast<int>(spec.value_decoder.size()) + 1;
  Eigen::RowVectorXd h = run_raw(params, walk, offsets, 0, n_enc, input.transpose(), spec.activation);
  Eigen::RowVectorXd v = run_raw(params, walk, offsets, n_enc + n_act, n_val, h, spec.activation);
  return v(0);
}

std::pair<double, Eigen::VectorXd> value_and_grad(const PolicyNetSpec& spec,
                                                  const Eigen::VectorXd& params,
                                                  const LossFn& loss_fn) {
  ad::Tape tape;
  BoundNet net(tape, spec, params);
  ad::Var loss = loss_fn(tape, net);
  tape.backward(loss);
  return {tape.value(loss)(0, 0), net.grad()};
}

}  // namespace gpo
