#pragma once

#include "vaeattr/core.hpp"

#include <functional>
#include <vector>

namespace vaeattr {

enum class Activation { Tanh, Relu, Identity };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct Layer {
  Matrix w;  // out x in
  Vector b;  // out
  Activation act = Activation::Identity;
};

/// Plain fully connected net. input_dropout[k] is the inverted-dropout rate
/// applied to layer k's input in train mode (0 disables). Eval mode never
/// rescales, so train-mode expectation matches eval output.
struct Mlp {
  std::vector<Layer> layers;
  std::vector<double> input_dropout;

  Index input_size() const { return layers.empty() ? 0 : layers.front().w.cols(); }
  Index output_size() const { return layers.empty() ? 0 : layers.back().w.rows(); }
};

/// Builds a net with the given unit counts (sizes.front() = input width,
/// sizes.back() = output width). Weights use Xavier-uniform for tanh and
/// identity layers and He-uniform for ReLU; biases start at zero.
Mlp make_mlp(const std::vector<Index>& sizes, const std::vector<Activation>& acts,
             const std::vector<double>& input_dropout, Rng& rng);

struct ForwardTape {
  std::vector<Vector> inputs;  // post-dropout input to each layer
  std::vector<Vector> pre;     // w * input + b
  std::vector<Vector> masks;   // dropout scale factors; empty vector when inactive
  Vector output;
  bool train_mode = false;
};

/// Eval-mode forward (dropout off). Pass a tape to enable backward().
Vector forward(const Mlp& net, const Vector& x, ForwardTape* tape = nullptr);

/// Train-mode forward; dropout masks are drawn from rng and recorded.
Vector forward_train(const Mlp& net, const Vector& x, Rng& rng, ForwardTape& tape);

struct MlpGrads {
  std::vector<Matrix> dw;
  std::vector<Vector> db;

  void set_zero();
  void add_scaled(const MlpGrads& other, double scale);
};

MlpGrads make_zero_grads(const Mlp& net);

/// Exact gradients of the scalar loss whose d(loss)/d(output) is out_grad,
/// accumulated into `into` (callers zero it between uses). Returns the
/// gradient with respect to the net input. `into` may be null when only the
/// input gradient is needed.
Vector backward(const Mlp& net, const ForwardTape& tape, const Vector& out_grad,
                MlpGrads* into);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long step = 0;
  MlpGrads m;  // first moments, shapes mirror the net
  MlpGrads v;  // second moments
};

AdamState make_adam_state(const Mlp& net, double lr, double weight_decay);

/// One Adam update. Weight decay enters as an L2 term on the gradient
/// (g += wd * param) before the moment updates.
void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_layer;
  bool passed = false;
};

/// Central-difference check of `analytic` against `loss`. Relative error per
/// entry is |a - f| / max(|a|, |f|, 1e-3); the absolute floor keeps finite
/// difference rounding noise from dominating near-zero gradients.
GradCheckReport gradient_check(Mlp& net,
                               const std::function<double(const Mlp&)>& loss,
                               const std::function<MlpGrads(const Mlp&)>& analytic,
                               double tolerance, double fd_step = 1e-5);

}  // namespace vaeattr
