#include "vaeattr/vae.hpp"

#include "gaussian_internal.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace vaeattr {

using internal::draw_noise;
using internal::gate_clamped;
using internal::kHalfLog2Pi;
using internal::kl_closed_form;
using internal::per_dim_density;
using internal::split_gaussian_head;

Index scaled_layer_size(double ratio, Index input_dim) {
  const double raw = ratio * static_cast<double>(input_dim);
  return std::max<Index>(1, static_cast<Index>(std::ceil(raw - 1e-9)));
}

Index latent_layer_size(double ratio, Index input_dim) {
  return std::max<Index>(
      1, static_cast<Index>(std::llround(ratio * static_cast<double>(input_dim))));
}

double VaeModel::log_sigma_floor() const { return std::log(config.sigma_floor); }
double VaeModel::log_sigma_ceil() const { return std::log(config.sigma_ceil); }

LatentGaussian VaeModel::encode(const Vector& x) const {
  GaussianHead head =
      split_gaussian_head(forward(encoder, x), log_sigma_floor(), log_sigma_ceil());
  return LatentGaussian{std::move(head.mu), std::move(head.log_sigma)};
}

GaussianHead VaeModel::decode(const Vector& z) const {
  return split_gaussian_head(forward(decoder, z), log_sigma_floor(), log_sigma_ceil());
}

VaeModel make_vae(Index input_dim, const VaeConfig& config, Rng& rng) {
  if (input_dim < 1) throw std::invalid_argument("make_vae: input_dim must be >= 1");
  VaeModel model;
  model.input_dim = input_dim;
  model.latent_dim = latent_layer_size(config.latent_ratio, input_dim);
  model.config = config;

  std::vector<Index> enc_sizes{input_dim};
  for (double r : config.hidden_ratios) enc_sizes.push_back(scaled_layer_size(r, input_dim));
  enc_sizes.push_back(2 * model.latent_dim);

  std::vector<Index> dec_sizes{model.latent_dim};
  for (auto it = config.hidden_ratios.rbegin(); it != config.hidden_ratios.rend(); ++it)
    dec_sizes.push_back(scaled_layer_size(*it, input_dim));
  dec_sizes.push_back(2 * input_dim);

  const std::size_t n_hidden = config.hidden_ratios.size();
  std::vector<Activation> acts(n_hidden, Activation::Tanh);
  acts.push_back(Activation::Identity);  // parameter heads are linear

  std::vector<double> enc_drop(n_hidden + 1, config.dropout ? config.hidden_dropout : 0.0);
  enc_drop[0] = config.dropout ? config.input_dropout : 0.0;
  std::vector<double> dec_drop(n_hidden + 1, config.dropout ? config.hidden_dropout : 0.0);
  dec_drop[0] = 0.0;  // latent samples are not dropped

  model.encoder = make_mlp(enc_sizes, acts, enc_drop, rng);
  model.decoder = make_mlp(dec_sizes, acts, dec_drop, rng);
  return model;
}

double gaussian_log_density(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) {
    throw std::domain_error("gaussian_log_density: sigma must be positive, got " +
                            std::to_string(sigma));
  }
  const double r = (x - mu) / sigma;
  return -kHalfLog2Pi - std::log(sigma) - 0.5 * r * r;
}

double kl_diag_gaussians(const LatentGaussian& q) {
  if (q.mu.size() != q.log_sigma.size()) {
    throw std::invalid_argument("kl_diag_gaussians: mu/log_sigma size mismatch");
  }
  return kl_closed_form(q.mu, q.log_sigma);
}

namespace {

// Shared ELBO evaluation with optional backward over frozen noise (eval-mode
// forwards, so dropout is off and the value is deterministic in its inputs).
double elbo_core(const VaeModel& model, const Vector& x, const Matrix& eps,
                 MlpGrads* enc_grads, MlpGrads* dec_grads) {
  if (x.size() != model.input_dim) throw std::invalid_argument("elbo: input size mismatch");
  if (eps.cols() != model.latent_dim || eps.rows() < 1) {
    throw std::invalid_argument("elbo: noise must be n_samples x latent_dim with n_samples >= 1");
  }
  const bool want_grads = enc_grads != nullptr || dec_grads != nullptr;
  const double lo = model.log_sigma_floor();
  const double hi = model.log_sigma_ceil();
  const Index l_count = eps.rows();

  ForwardTape enc_tape;
  GaussianHead q = split_gaussian_head(
      forward(model.encoder, x, want_grads ? &enc_tape : nullptr), lo, hi);
  const Vector sigma_z = q.log_sigma.array().exp();

  double recon_sum = 0.0;
  Vector g_mu = Vector::Zero(model.latent_dim);
  Vector g_ls = Vector::Zero(model.latent_dim);
  const double per_sample = 1.0 / static_cast<double>(l_count);

  for (Index l = 0; l < l_count; ++l) {
    const Vector z = q.mu + sigma_z.cwiseProduct(eps.row(l).transpose());
    ForwardTape dec_tape;
    GaussianHead p = split_gaussian_head(
        forward(model.decoder, z, want_grads ? &dec_tape : nullptr), lo, hi);
    const auto density = per_dim_density(x, p);
    for (Index i = 0; i < density.log_pdf.size(); ++i) recon_sum += density.log_pdf[i];
    if (want_grads) {
      Vector out_grad;
      internal::density_output_grad(density, p, lo, hi, per_sample, out_grad);
      Vector g_z = backward(model.decoder, dec_tape, out_grad, dec_grads);
      g_mu += g_z;
      g_ls += g_z.cwiseProduct(sigma_z.cwiseProduct(eps.row(l).transpose()));
    }
  }

  const double kl = kl_closed_form(q.mu, q.log_sigma);
  const double value = recon_sum / static_cast<double>(l_count) - kl;

  if (want_grads) {
    g_mu -= q.mu;
    g_ls -= (sigma_z.array().square() - 1.0).matrix();
    gate_clamped(q.raw_log_sigma, lo, hi, g_ls);
    Vector enc_out_grad(2 * model.latent_dim);
    enc_out_grad.head(model.latent_dim) = g_mu;
    enc_out_grad.tail(model.latent_dim) = g_ls;
    backward(model.encoder, enc_tape, enc_out_grad, enc_grads);
  }
  return value;
}

// Train-mode counterpart: dropout masks and noise come from rng, and
// grad_scale * dELBO/dtheta is accumulated into the batch gradients.
double elbo_train_backward(const VaeModel& model, const Vector& x, Rng& rng, int l_count,
                           MlpGrads& enc_grads, MlpGrads& dec_grads, double grad_scale) {
  const double lo = model.log_sigma_floor();
  const double hi = model.log_sigma_ceil();

  ForwardTape enc_tape;
  GaussianHead q =
      split_gaussian_head(forward_train(model.encoder, x, rng, enc_tape), lo, hi);
  const Vector sigma_z = q.log_sigma.array().exp();

  double recon_sum = 0.0;
  Vector g_mu = Vector::Zero(model.latent_dim);
  Vector g_ls = Vector::Zero(model.latent_dim);
  const double per_sample = grad_scale / static_cast<double>(l_count);

  for (int l = 0; l < l_count; ++l) {
    Vector eps(model.latent_dim);
    for (Index j = 0; j < model.latent_dim; ++j) eps[j] = rng.standard_normal();
    const Vector z = q.mu + sigma_z.cwiseProduct(eps);
    ForwardTape dec_tape;
    GaussianHead p = split_gaussian_head(forward_train(model.decoder, z, rng, dec_tape), lo, hi);
    const auto density = per_dim_density(x, p);
    recon_sum += density.log_pdf.sum();

    Vector out_grad;
    internal::density_output_grad(density, p, lo, hi, per_sample, out_grad);
    Vector g_z = backward(model.decoder, dec_tape, out_grad, &dec_grads);
    g_mu += g_z;
    g_ls += g_z.cwiseProduct(sigma_z.cwiseProduct(eps));
  }

  const double kl = kl_closed_form(q.mu, q.log_sigma);
  g_mu -= grad_scale * q.mu;
  g_ls -= grad_scale * (sigma_z.array().square() - 1.0).matrix();
  gate_clamped(q.raw_log_sigma, lo, hi, g_ls);
  Vector enc_out_grad(2 * model.latent_dim);
  enc_out_grad.head(model.latent_dim) = g_mu;
  enc_out_grad.tail(model.latent_dim) = g_ls;
  backward(model.encoder, enc_tape, enc_out_grad, &enc_grads);

  return recon_sum / static_cast<double>(l_count) - kl;
}

}  // namespace

double elbo_with_noise(const VaeModel& model, const Vector& x, const Matrix& eps) {
  return elbo_core(model, x, eps, nullptr, nullptr);
}

double elbo(const VaeModel& model, const Vector& x, Rng& rng, int n_samples) {
  if (n_samples < 1) throw std::invalid_argument("elbo: n_samples must be >= 1");
  const Matrix eps = draw_noise(rng, n_samples, model.latent_dim);
  return elbo_with_noise(model, x, eps);
}

double anomaly_score(const VaeModel& model, const Vector& x, Rng& rng) {
  return -elbo(model, x, rng, model.config.l_eval);
}

Vector expected_dim_probability_with_noise(const VaeModel& model, const Vector& x,
                                           const LatentGaussian& q, const Matrix& eps) {
  if (x.size() != model.input_dim) {
    throw std::invalid_argument("expected_dim_probability: input size mismatch");
  }
  const Vector sigma_z = q.sigma();
  Vector probs = Vector::Zero(model.input_dim);
  for (Index l = 0; l < eps.rows(); ++l) {
    const Vector z = q.mu + sigma_z.cwiseProduct(eps.row(l).transpose());
    const GaussianHead p = model.decode(z);
    probs.array() += per_dim_density(x, p).log_pdf.array().exp();
  }
  return probs / static_cast<double>(eps.rows());
}

Vector expected_dim_probability(const VaeModel& model, const Vector& x,
                                const LatentGaussian& q, Rng& rng) {
  const Matrix eps = draw_noise(rng, model.config.l_eval, model.latent_dim);
  return expected_dim_probability_with_noise(model, x, q, eps);
}

VaeGradients elbo_gradients(const VaeModel& model, const Vector& x, const Matrix& eps) {
  VaeGradients grads;
  grads.encoder = make_zero_grads(model.encoder);
  grads.decoder = make_zero_grads(model.decoder);
  grads.value = elbo_core(model, x, eps, &grads.encoder, &grads.decoder);
  return grads;
}

VaeTrainResult train_vae(const Matrix& rows, const VaeConfig& config, std::uint64_t seed) {
  if (rows.rows() == 0) throw std::invalid_argument("train_vae: empty dataset");
  Rng rng(seed);
  VaeTrainResult result;
  result.model = make_vae(rows.cols(), config, rng);
  result.model.train_seed = seed;

  VaeModel& model = result.model;
  AdamState enc_state = make_adam_state(model.encoder, config.learning_rate, config.weight_decay);
  AdamState dec_state = make_adam_state(model.decoder, config.learning_rate, config.weight_decay);
  MlpGrads enc_batch = make_zero_grads(model.encoder);
  MlpGrads dec_batch = make_zero_grads(model.decoder);

  const Index n = rows.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Index batch_size = std::max<Index>(1, config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (Index i = n - 1; i > 0; --i) {
      const Index j = static_cast<Index>(rng.uniform(0.0, static_cast<double>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += batch_size) {
      const Index count = std::min(batch_size, n - start);
      enc_batch.set_zero();
      dec_batch.set_zero();
      // Minimize mean negative ELBO over the batch.
      const double scale = -1.0 / static_cast<double>(count);
      for (Index k = 0; k < count; ++k) {
        const Vector x = rows.row(order[static_cast<std::size_t>(start + k)]).transpose();
        const double value =
            elbo_train_backward(model, x, rng, config.l_train, enc_batch, dec_batch, scale);
        if (!std::isfinite(value)) {
          throw std::runtime_error("train_vae: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch offset " +
                                   std::to_string(start));
        }
        epoch_loss += -value;
      }
      adam_step(model.encoder, enc_batch, enc_state);
      adam_step(model.decoder, dec_batch, dec_state);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(n));
  }
  return result;
}

Calibration calibrate_thresholds(VaeModel& model, const Matrix& train_rows, Rng& rng) {
  const Index n = train_rows.rows();
  if (n == 0) throw std::invalid_argument("calibrate_thresholds: empty training data");

  std::vector<double> elbos(static_cast<std::size_t>(n));
  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(n * model.input_dim));

  for (Index i = 0; i < n; ++i) {
    const Vector x = train_rows.row(i).transpose();
    const Matrix eps = draw_noise(rng, model.config.l_eval, model.latent_dim);
    elbos[static_cast<std::size_t>(i)] = elbo_with_noise(model, x, eps);
    const LatentGaussian q = model.encode(x);
    const Vector probs = expected_dim_probability_with_noise(model, x, q, eps);
    for (Index d = 0; d < probs.size(); ++d) pooled.push_back(probs[d]);
  }

  Calibration cal;
  double mean_elbo = 0.0;
  for (double e : elbos) mean_elbo += e;
  mean_elbo /= static_cast<double>(n);
  cal.gamma = mean_elbo;

  cal.score_mean = -mean_elbo;
  double var = 0.0;
  for (double e : elbos) var += (-e - cal.score_mean) * (-e - cal.score_mean);
  var /= static_cast<double>(n);  // population
  cal.score_std = std::sqrt(var);
  cal.detect_threshold = cal.score_mean + 3.0 * cal.score_std;

  std::sort(pooled.begin(), pooled.end());
  if (pooled.size() < 100) {
    std::cerr << "calibrate_thresholds: only " << pooled.size()
              << " pooled probabilities; 1st percentile is ill-defined, using the minimum\n";
    cal.beta = pooled.front();
  } else {
    // Nearest-rank percentile.
    const auto rank =
        static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(pooled.size()))) - 1;
    cal.beta = pooled[rank];
  }

  model.gamma = cal.gamma;
  model.beta = cal.beta;
  model.detect_threshold = cal.detect_threshold;
  model.train_score_mean = cal.score_mean;
  model.train_score_std = cal.score_std;
  model.calibrated = true;
  return cal;
}

}  // namespace vaeattr
