#pragma once

#include "vaeattr/core.hpp"
#include "vaeattr/mlp.hpp"

#include <cstdint>
#include <vector>

namespace vaeattr {

/// Diagonal Gaussian over the latent space, parameterized by (mu, log sigma).
struct LatentGaussian {
  Vector mu;
  Vector log_sigma;

  Vector sigma() const { return log_sigma.array().exp(); }
};

struct VaeConfig {
  // Hidden widths as ratios of the input width; the decoder mirrors them.
  std::vector<double> hidden_ratios{0.7, 0.5};
  double latent_ratio = 0.1;
  int epochs = 100;
  int batch_size = 16;
  double weight_decay = 1e-3;
  double learning_rate = 1e-3;
  bool dropout = true;        // off mirrors the sparse one-hot-heavy regime
  double input_dropout = 0.2;
  double hidden_dropout = 0.5;
  // Clamp on encoder/decoder sigma; keeps log-densities finite when a
  // dimension becomes nearly deterministic.
  double sigma_floor = 1e-3;
  double sigma_ceil = 1e3;
  int l_train = 1;   // MC samples per datum during training
  int l_eval = 16;   // MC samples for scoring and attribution
};

/// Mean/log-sigma pair emitted by an encoder or decoder head. raw_log_sigma
/// keeps the pre-clamp values so gradients can be gated where the clamp is
/// active.
struct GaussianHead {
  Vector mu;
  Vector log_sigma;
  Vector raw_log_sigma;
};

struct VaeModel {
  Mlp encoder;  // input_dim -> 2 * latent_dim (mu_z || log sigma_z)
  Mlp decoder;  // latent_dim -> 2 * input_dim (mu_x || log sigma_x)
  Index input_dim = 0;
  Index latent_dim = 0;

  // Calibration constants, set by calibrate_thresholds.
  double gamma = 0.0;             // mean training ELBO
  double beta = 0.0;              // 1st percentile of pooled expected probabilities
  double detect_threshold = 0.0;  // train score mean + 3 * std
  double train_score_mean = 0.0;
  double train_score_std = 0.0;
  bool calibrated = false;

  VaeConfig config;
  std::uint64_t train_seed = 0;

  LatentGaussian encode(const Vector& x) const;
  GaussianHead decode(const Vector& z) const;
  double log_sigma_floor() const;
  double log_sigma_ceil() const;
};

Index scaled_layer_size(double ratio, Index input_dim);
Index latent_layer_size(double ratio, Index input_dim);

VaeModel make_vae(Index input_dim, const VaeConfig& config, Rng& rng);

/// log N(x; mu, sigma^2). Throws std::domain_error unless sigma > 0.
double gaussian_log_density(double x, double mu, double sigma);

/// KL(q || N(0, I)) for a diagonal Gaussian, in closed form. Always >= 0.
double kl_diag_gaussians(const LatentGaussian& q);

/// Reparameterized ELBO estimate with n_samples Monte-Carlo draws.
double elbo(const VaeModel& model, const Vector& x, Rng& rng, int n_samples);

/// Same, with the noise matrix (n_samples x latent_dim) supplied by the
/// caller; deterministic in its inputs, which makes it differentiable for
/// gradient checks and latent-space optimization.
double elbo_with_noise(const VaeModel& model, const Vector& x, const Matrix& eps);

/// Negative ELBO at l_eval samples.
double anomaly_score(const VaeModel& model, const Vector& x, Rng& rng);

/// Per-dimension Monte-Carlo estimate of E_q[p(x_i | z)] with q supplied by
/// the caller, l_eval draws.
Vector expected_dim_probability(const VaeModel& model, const Vector& x,
                                const LatentGaussian& q, Rng& rng);
Vector expected_dim_probability_with_noise(const VaeModel& model, const Vector& x,
                                           const LatentGaussian& q, const Matrix& eps);

/// Gradients of the frozen-noise ELBO with respect to every encoder and
/// decoder parameter (eval mode, dropout off).
struct VaeGradients {
  MlpGrads encoder;
  MlpGrads decoder;
  double value = 0.0;
};
VaeGradients elbo_gradients(const VaeModel& model, const Vector& x, const Matrix& eps);

struct VaeTrainResult {
  VaeModel model;
  std::vector<double> loss_curve;  // mean negative ELBO per epoch
};

/// Trains on rows (samples x dims, already standardized, all normal) by
/// minibatch ascent on the single-sample ELBO estimate. Deterministic for a
/// fixed (rows, config, seed).
VaeTrainResult train_vae(const Matrix& rows, const VaeConfig& config, std::uint64_t seed);

struct Calibration {
  double gamma = 0.0;
  double beta = 0.0;
  double detect_threshold = 0.0;
  double score_mean = 0.0;
  double score_std = 0.0;
};

/// gamma = mean training ELBO; beta = 1st percentile (nearest rank) of the
/// pooled per-(row, dimension) expected probabilities; detect_threshold =
/// mean + 3 std of training anomaly scores. Updates the model in place and
/// returns the values. Pools of fewer than 100 values fall back to the
/// minimum with a warning on stderr.
Calibration calibrate_thresholds(VaeModel& model, const Matrix& train_rows, Rng& rng);

}  // namespace vaeattr
