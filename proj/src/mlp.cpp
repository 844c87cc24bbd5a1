#include "vaeattr/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vaeattr {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation: " + name);
}

Mlp make_mlp(const std::vector<Index>& sizes, const std::vector<Activation>& acts,
             const std::vector<double>& input_dropout, Rng& rng) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least one layer");
  const std::size_t n_layers = sizes.size() - 1;
  if (acts.size() != n_layers || input_dropout.size() != n_layers) {
    throw std::invalid_argument("make_mlp: acts/dropout length must match layer count");
  }
  Mlp net;
  net.layers.resize(n_layers);
  net.input_dropout = input_dropout;
  for (std::size_t k = 0; k < n_layers; ++k) {
    const Index fan_in = sizes[k];
    const Index fan_out = sizes[k + 1];
    if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("make_mlp: layer width must be >= 1");
    Layer& layer = net.layers[k];
    layer.act = acts[k];
    // He-uniform for ReLU, Xavier-uniform otherwise.
    const double limit = layer.act == Activation::Relu
                             ? std::sqrt(6.0 / static_cast<double>(fan_in))
                             : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    layer.w.resize(fan_out, fan_in);
    for (Index i = 0; i < fan_out; ++i)
      for (Index j = 0; j < fan_in; ++j) layer.w(i, j) = rng.uniform(-limit, limit);
    layer.b = Vector::Zero(fan_out);
  }
  return net;
}

namespace {

void apply_activation(Activation act, const Vector& pre, Vector& post) {
  switch (act) {
    case Activation::Tanh: post = pre.array().tanh(); break;
    case Activation::Relu: post = pre.cwiseMax(0.0); break;
    case Activation::Identity: post = pre; break;
  }
}

// d(post)/d(pre) folded into the incoming gradient. ReLU subgradient at 0 is 0.
void chain_activation(Activation act, const Vector& pre, Vector& grad) {
  switch (act) {
    case Activation::Tanh: {
      grad.array() *= 1.0 - pre.array().tanh().square();
      break;
    }
    case Activation::Relu: {
      for (Index i = 0; i < pre.size(); ++i)
        if (pre[i] <= 0.0) grad[i] = 0.0;
      break;
    }
    case Activation::Identity: break;
  }
}

Vector run_forward(const Mlp& net, const Vector& x, bool train, Rng* rng, ForwardTape* tape) {
  if (x.size() != net.input_size()) {
    throw std::invalid_argument("forward: input size " + std::to_string(x.size()) +
                                " does not match net input " + std::to_string(net.input_size()));
  }
  const std::size_t n = net.layers.size();
  if (tape) {
    tape->inputs.assign(n, Vector());
    tape->pre.assign(n, Vector());
    tape->masks.assign(n, Vector());
    tape->train_mode = train;
  }
  Vector cur = x;
  for (std::size_t k = 0; k < n; ++k) {
    const double rate = net.input_dropout[k];
    if (train && rate > 0.0) {
      const double keep = 1.0 - rate;
      Vector mask(cur.size());
      for (Index i = 0; i < cur.size(); ++i)
        mask[i] = (rng->uniform01() < keep) ? 1.0 / keep : 0.0;
      cur = cur.cwiseProduct(mask);
      if (tape) tape->masks[k] = std::move(mask);
    }
    if (tape) tape->inputs[k] = cur;
    Vector pre = net.layers[k].w * cur + net.layers[k].b;
    apply_activation(net.layers[k].act, pre, cur);
    if (tape) tape->pre[k] = std::move(pre);
  }
  if (tape) tape->output = cur;
  return cur;
}

}  // namespace

Vector forward(const Mlp& net, const Vector& x, ForwardTape* tape) {
  return run_forward(net, x, false, nullptr, tape);
}

Vector forward_train(const Mlp& net, const Vector& x, Rng& rng, ForwardTape& tape) {
  return run_forward(net, x, true, &rng, &tape);
}

void MlpGrads::set_zero() {
  for (auto& m : dw) m.setZero();
  for (auto& v : db) v.setZero();
}

void MlpGrads::add_scaled(const MlpGrads& other, double scale) {
  for (std::size_t k = 0; k < dw.size(); ++k) {
    dw[k] += scale * other.dw[k];
    db[k] += scale * other.db[k];
  }
}

MlpGrads make_zero_grads(const Mlp& net) {
  MlpGrads g;
  g.dw.reserve(net.layers.size());
  g.db.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    g.dw.emplace_back(Matrix::Zero(layer.w.rows(), layer.w.cols()));
    g.db.emplace_back(Vector::Zero(layer.b.size()));
  }
  return g;
}

Vector backward(const Mlp& net, const ForwardTape& tape, const Vector& out_grad,
                MlpGrads* into) {
  const std::size_t n = net.layers.size();
  if (tape.inputs.size() != n || tape.pre.size() != n) {
    throw std::invalid_argument("backward: tape does not match net");
  }
  if (out_grad.size() != net.output_size()) {
    throw std::invalid_argument("backward: output gradient size mismatch");
  }
  Vector grad = out_grad;
  for (std::size_t k = n; k-- > 0;) {
    chain_activation(net.layers[k].act, tape.pre[k], grad);
    if (into) {
      into->dw[k].noalias() += grad * tape.inputs[k].transpose();
      into->db[k] += grad;
    }
    Vector prev = net.layers[k].w.transpose() * grad;
    if (tape.train_mode && tape.masks[k].size() > 0) prev = prev.cwiseProduct(tape.masks[k]);
    grad = std::move(prev);
  }
  return grad;
}

AdamState make_adam_state(const Mlp& net, double lr, double weight_decay) {
  AdamState st;
  st.lr = lr;
  st.weight_decay = weight_decay;
  st.m = make_zero_grads(net);
  st.v = make_zero_grads(net);
  return st;
}

namespace {

template <typename Param>
void adam_update(Param& p, const Param& g_in, Param& m, Param& v, const AdamState& st,
                 double bias1, double bias2) {
  const Param g = g_in + st.weight_decay * p;
  m = st.beta1 * m + (1.0 - st.beta1) * g;
  v.array() = st.beta2 * v.array() + (1.0 - st.beta2) * g.array().square();
  p.array() -= st.lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + st.eps);
}

}  // namespace

void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state) {
  if (grads.dw.size() != net.layers.size()) {
    throw std::invalid_argument("adam_step: gradient/parameter shape mismatch");
  }
  state.step += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    adam_update(net.layers[k].w, grads.dw[k], state.m.dw[k], state.v.dw[k], state, bias1, bias2);
    adam_update(net.layers[k].b, grads.db[k], state.m.db[k], state.v.db[k], state, bias1, bias2);
  }
}

namespace {

double rel_error(double a, double f) {
  const double scale = std::max({std::abs(a), std::abs(f), 1e-3});
  return std::abs(a - f) / scale;
}

}  // namespace

GradCheckReport gradient_check(Mlp& net,
                               const std::function<double(const Mlp&)>& loss,
                               const std::function<MlpGrads(const Mlp&)>& analytic,
                               double tolerance, double fd_step) {
  const MlpGrads grads = analytic(net);
  GradCheckReport report;
  report.per_layer.assign(net.layers.size(), 0.0);

  auto check_entry = [&](double& param, double analytic_grad, std::size_t layer) {
    const double saved = param;
    param = saved + fd_step;
    const double up = loss(net);
    param = saved - fd_step;
    const double down = loss(net);
    param = saved;
    const double fd = (up - down) / (2.0 * fd_step);
    const double err = rel_error(analytic_grad, fd);
    report.per_layer[layer] = std::max(report.per_layer[layer], err);
  };

  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    Layer& layer = net.layers[k];
    for (Index i = 0; i < layer.w.rows(); ++i)
      for (Index j = 0; j < layer.w.cols(); ++j) check_entry(layer.w(i, j), grads.dw[k](i, j), k);
    for (Index i = 0; i < layer.b.size(); ++i) check_entry(layer.b[i], grads.db[k][i], k);
  }
  for (double e : report.per_layer) report.max_rel_error = std::max(report.max_rel_error, e);
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace vaeattr
