#include "vaeattr/baselines.hpp"

#include "vaeattr/attribution.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

namespace vaeattr {

VaeRecResult vae_rec_attribution(const VaeModel& model, const Vector& x_anom, Rng& rng) {
  if (!model.calibrated) {
    throw std::invalid_argument("vae_rec_attribution: model has no calibrated thresholds");
  }
  // Identical call sequence to estimate_psi at the encoder posterior, so the
  // two agree bit for bit under the same seed.
  const LatentGaussian q = initial_latent(model, x_anom);
  VaeRecResult result;
  result.per_dim_expected_prob = expected_dim_probability(model, x_anom, q, rng);
  for (Index i = 0; i < result.per_dim_expected_prob.size(); ++i) {
    if (result.per_dim_expected_prob[i] < model.beta) result.psi.push_back(i);
  }
  return result;
}

Vector AeModel::reconstruct(const Vector& x) const { return forward(net, x); }

double ae_anomaly_score(const AeModel& model, const Vector& x) {
  const Vector r = x - model.reconstruct(x);
  return r.squaredNorm() / static_cast<double>(model.input_dim);
}

AeTrainResult train_ae(const Matrix& rows, const AeConfig& config, std::uint64_t seed) {
  if (rows.rows() == 0) throw std::invalid_argument("train_ae: empty dataset");
  const Index n_dims = rows.cols();
  Rng rng(seed);

  std::vector<Index> sizes{n_dims};
  for (double r : config.hidden_ratios) sizes.push_back(scaled_layer_size(r, n_dims));
  sizes.push_back(latent_layer_size(config.latent_ratio, n_dims));
  for (auto it = config.hidden_ratios.rbegin(); it != config.hidden_ratios.rend(); ++it)
    sizes.push_back(scaled_layer_size(*it, n_dims));
  sizes.push_back(n_dims);

  const std::size_t n_layers = sizes.size() - 1;
  std::vector<Activation> acts(n_layers, Activation::Relu);
  acts[config.hidden_ratios.size()] = Activation::Identity;  // bottleneck
  acts[n_layers - 1] = Activation::Identity;                 // output

  std::vector<double> drop(n_layers, config.dropout ? config.hidden_dropout : 0.0);
  drop[0] = config.dropout ? config.input_dropout : 0.0;

  AeTrainResult result;
  result.model.net = make_mlp(sizes, acts, drop, rng);
  result.model.input_dim = n_dims;
  result.model.config = config;
  result.model.train_seed = seed;
  Mlp& net = result.model.net;

  AdamState state = make_adam_state(net, config.learning_rate, config.weight_decay);
  MlpGrads batch_grads = make_zero_grads(net);

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
      batch_grads.set_zero();
      const double scale = 1.0 / static_cast<double>(count);
      for (Index k = 0; k < count; ++k) {
        const Vector x = rows.row(order[static_cast<std::size_t>(start + k)]).transpose();
        ForwardTape tape;
        const Vector out = forward_train(net, x, rng, tape);
        const Vector residual = out - x;
        const double loss = residual.squaredNorm() / static_cast<double>(n_dims);
        if (!std::isfinite(loss)) {
          throw std::runtime_error("train_ae: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch offset " +
                                   std::to_string(start));
        }
        epoch_loss += loss;
        const Vector out_grad =
            (2.0 * scale / static_cast<double>(n_dims)) * residual;
        backward(net, tape, out_grad, &batch_grads);
      }
      adam_step(net, batch_grads, state);
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(n));
  }

  // Detection threshold: mean + 3 std of the training scores.
  double mean = 0.0;
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    scores[static_cast<std::size_t>(i)] = ae_anomaly_score(result.model, rows.row(i).transpose());
    mean += scores[static_cast<std::size_t>(i)];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(n);
  result.model.train_score_mean = mean;
  result.model.train_score_std = std::sqrt(var);
  result.model.detect_threshold = mean + 3.0 * std::sqrt(var);
  return result;
}

double soft_threshold(double value, double threshold) {
  if (value > threshold) return value - threshold;
  if (value < -threshold) return value + threshold;
  return 0.0;
}

namespace {

// d(score)/d(eta) for score(x - eta); network weights held constant.
Vector ae_so_gradient(const AeModel& model, const Vector& v, double& score_out) {
  ForwardTape tape;
  const Vector out = forward(model.net, v, &tape);
  const Vector residual = v - out;
  const double inv_n = 1.0 / static_cast<double>(model.input_dim);
  score_out = residual.squaredNorm() * inv_n;
  const Vector through_net = backward(model.net, tape, 2.0 * inv_n * residual, nullptr);
  // d(score)/dv = (2/N) r - J^T (2/N) r; eta enters as v = x - eta.
  return -(2.0 * inv_n * residual - through_net);
}

}  // namespace

AeSoResult ae_so_attribution(const AeModel& model, const Vector& x_anom,
                             const AeSoConfig& config) {
  if (x_anom.size() != model.input_dim) {
    throw std::invalid_argument("ae_so_attribution: input size mismatch");
  }
  const Index n = model.input_dim;
  Vector eta = Vector::Zero(n);
  double step = config.init_step;

  double score = 0.0;
  Vector grad = ae_so_gradient(model, x_anom - eta, score);
  double objective = score + config.lambda * eta.lpNorm<1>();

  AeSoResult result;
  result.objective_trace.push_back(objective);

  for (int iter = 0; iter < config.max_iters; ++iter) {
    // Backtracking proximal step; guarantees the composite objective is
    // non-increasing.
    Vector eta_next;
    double score_next = 0.0;
    while (true) {
      eta_next.resize(n);
      for (Index i = 0; i < n; ++i) {
        eta_next[i] = soft_threshold(eta[i] - step * grad[i], step * config.lambda);
      }
      const Vector delta = eta_next - eta;
      score_next = ae_anomaly_score(model, x_anom - eta_next);
      const double quad_bound =
          score + grad.dot(delta) + delta.squaredNorm() / (2.0 * step);
      if (score_next <= quad_bound + 1e-12 || step < 1e-12) break;
      step *= 0.5;
    }
    const double objective_next = score_next + config.lambda * eta_next.lpNorm<1>();
    const double change = std::abs(objective - objective_next);
    eta = std::move(eta_next);
    objective = objective_next;
    result.objective_trace.push_back(objective);
    if (change <= config.tol * std::max(1.0, std::abs(objective))) {
      result.converged = true;
      break;
    }
    grad = ae_so_gradient(model, x_anom - eta, score);
  }

  result.eta = eta;
  for (Index i = 0; i < n; ++i) {
    if (std::abs(eta[i]) > config.threshold) result.dims.push_back(i);
  }
  return result;
}

AeSoResult ae_so_attribution(const AeModel& model, const Vector& x_anom, double lambda,
                             double threshold) {
  AeSoConfig config;
  config.lambda = lambda;
  config.threshold = threshold;
  return ae_so_attribution(model, x_anom, config);
}

PcaModel fit_pca(const Matrix& rows, Index k) {
  const Index n = rows.rows();
  const Index dims = rows.cols();
  if (n == 0) throw std::invalid_argument("fit_pca: empty data");
  if (k < 0 || k > dims) throw std::invalid_argument("fit_pca: k must satisfy 0 <= k <= dims");

  PcaModel model;
  model.mean = rows.colwise().mean().transpose();
  Matrix centered = rows.rowwise() - model.mean.transpose();
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("fit_pca: eigensolver failed");
  const Vector& eigenvalues = solver.eigenvalues();  // ascending
  const double lambda_max = eigenvalues[dims - 1];

  Index rank = 0;
  for (Index i = 0; i < dims; ++i) {
    if (eigenvalues[i] > std::max(lambda_max, 0.0) * 1e-12) ++rank;
  }
  if (k > rank) {
    std::cerr << "fit_pca: requested " << k << " components but covariance rank is " << rank
              << "; reducing\n";
    k = rank;
  }

  model.components.resize(k, dims);
  for (Index c = 0; c < k; ++c) {
    Vector v = solver.eigenvectors().col(dims - 1 - c);  // descending eigenvalue order
    Index pivot = 0;
    for (Index i = 1; i < dims; ++i) {
      if (std::abs(v[i]) > std::abs(v[pivot])) pivot = i;
    }
    if (v[pivot] < 0.0) v = -v;
    model.components.row(c) = v.transpose();
  }

  std::vector<double> scores(static_cast<std::size_t>(n));
  double mean = 0.0;
  for (Index i = 0; i < n; ++i) {
    scores[static_cast<std::size_t>(i)] = pca_anomaly_score(model, rows.row(i).transpose());
    mean += scores[static_cast<std::size_t>(i)];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(n);
  model.train_score_mean = mean;
  model.train_score_std = std::sqrt(var);
  model.detect_threshold = mean + 3.0 * std::sqrt(var);
  return model;
}

double pca_anomaly_score(const PcaModel& model, const Vector& x) {
  if (x.size() != model.mean.size()) {
    throw std::invalid_argument("pca_anomaly_score: input size mismatch");
  }
  const Vector centered = x - model.mean;
  const Vector residual = centered - model.components.transpose() * (model.components * centered);
  return residual.squaredNorm();
}

}  // namespace vaeattr
