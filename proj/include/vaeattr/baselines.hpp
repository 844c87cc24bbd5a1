#pragma once

#include "vaeattr/core.hpp"
#include "vaeattr/mlp.hpp"
#include "vaeattr/vae.hpp"

#include <cstdint>
#include <vector>

namespace vaeattr {

/// Attribution by the encoder posterior alone: threshold the expected
/// probabilities without any latent exploration.
struct VaeRecResult {
  std::vector<Index> psi;
  Vector per_dim_expected_prob;
};
VaeRecResult vae_rec_attribution(const VaeModel& model, const Vector& x_anom, Rng& rng);

struct AeConfig {
  std::vector<double> hidden_ratios{0.7, 0.5};
  double latent_ratio = 0.1;
  int epochs = 100;
  int batch_size = 16;
  double weight_decay = 1e-3;
  double learning_rate = 1e-3;
  bool dropout = true;
  double input_dropout = 0.2;
  double hidden_dropout = 0.5;
};

/// Plain autoencoder; anomaly score is the per-dimension mean squared
/// reconstruction error, thresholded at train mean + 3 std.
struct AeModel {
  Mlp net;
  Index input_dim = 0;
  double detect_threshold = 0.0;
  double train_score_mean = 0.0;
  double train_score_std = 0.0;
  AeConfig config;
  std::uint64_t train_seed = 0;

  Vector reconstruct(const Vector& x) const;  // eval mode
};

double ae_anomaly_score(const AeModel& model, const Vector& x);

struct AeTrainResult {
  AeModel model;
  std::vector<double> loss_curve;  // mean squared error per epoch
};
AeTrainResult train_ae(const Matrix& rows, const AeConfig& config, std::uint64_t seed);

/// soft(v, t) = sign(v) * max(|v| - t, 0).
double soft_threshold(double value, double threshold);

struct AeSoConfig {
  double lambda = 0.1;      // L1 weight
  double threshold = 0.1;   // |eta_i| above this marks dimension i
  int max_iters = 500;
  double tol = 1e-6;        // relative objective change for convergence
  double init_step = 1.0;   // backtracking starts here and halves
};

struct AeSoResult {
  Vector eta;                          // contribution degrees
  std::vector<Index> dims;             // { i : |eta_i| > threshold }
  bool converged = false;
  std::vector<double> objective_trace;  // composite objective per accepted step
};

/// Sparse correction: minimize score(x - eta) + lambda * ||eta||_1 by
/// proximal gradient with backtracking line search, treating the network
/// weights as constants. The accepted-step objective is non-increasing.
AeSoResult ae_so_attribution(const AeModel& model, const Vector& x_anom,
                             const AeSoConfig& config);
AeSoResult ae_so_attribution(const AeModel& model, const Vector& x_anom, double lambda,
                             double threshold);

/// PCA detector: residual energy outside the top-k principal subspace.
struct PcaModel {
  Vector mean;
  Matrix components;  // k x N, orthonormal rows, descending eigenvalue order
  double detect_threshold = 0.0;
  double train_score_mean = 0.0;
  double train_score_std = 0.0;
};

/// Eigendecomposition of the population covariance. Requests beyond the
/// numerical rank are reduced with a warning on stderr. Row signs follow the
/// largest-magnitude entry (made positive) so fits are reproducible.
PcaModel fit_pca(const Matrix& rows, Index k);

double pca_anomaly_score(const PcaModel& model, const Vector& x);

}  // namespace vaeattr
