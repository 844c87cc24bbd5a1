#pragma once

#include "vaeattr/core.hpp"
#include "vaeattr/vae.hpp"

#include <vector>

namespace vaeattr {

struct AttributionConfig {
  int k_inc = 0;      // ignored-set increment; <= 0 resolves to ceil(0.1 * N)
  double lr = 0.05;   // latent gradient-ascent step on (mu, log sigma)
  int max_iters = 500;  // gradient steps per K phase
  int convergence_window = 10;
  double convergence_rel_tol = 1e-4;
  int l_samples = 16;  // MC draws per phase, frozen across iterations
  int k_max = -1;      // hard cap on K; < 0 resolves to N - 1
};

struct ExplorationTrace {
  std::vector<double> objective;  // one entry per gradient step
  std::vector<int> k;             // K in force at that step; never decreases
};

struct ExplorationResult {
  LatentGaussian q;
  int final_k = 0;
  double final_objective = 0.0;  // window-smoothed objective at exit
  bool converged = false;        // true iff the smoothed objective cleared gamma
  ExplorationTrace trace;
};

struct AttributionResult {
  std::vector<Index> psi;        // { i : expected prob < beta }, ascending
  Vector contribution_degrees;   // (x_i - mu_bar_i) / sigma_bar_i, signed
  int final_k = 0;
  double final_objective = 0.0;
  bool converged = false;
  Vector per_dim_expected_prob;  // the values psi was thresholded on
  ExplorationTrace trace;
};

/// Encoder posterior of the anomalous point; the exploration start.
LatentGaussian initial_latent(const VaeModel& model, const Vector& x_anom);

/// Number of dimensions whose expected probability under the encoder
/// posterior falls below beta.
int initial_k(const VaeModel& model, const Vector& x_anom, Rng& rng);

/// Indices of the k smallest entries, ties broken by lower index; returned in
/// ascending index order.
std::vector<Index> k_smallest_indices(const Vector& values, int k);

/// The k dimensions of least expected probability under q.
std::vector<Index> update_phi(const VaeModel& model, const Vector& x_anom,
                              const LatentGaussian& q, int k, Rng& rng);

/// Masked exploration objective: N/(N-K) times the mean masked log-likelihood
/// minus KL(q || prior). Throws if phi covers every dimension.
double attribution_objective(const VaeModel& model, const Vector& x_anom,
                             const LatentGaussian& q, const std::vector<Index>& phi,
                             Rng& rng, int l_samples);
double attribution_objective_with_noise(const VaeModel& model, const Vector& x_anom,
                                        const LatentGaussian& q,
                                        const std::vector<Index>& phi, const Matrix& eps);

/// Gradients of the frozen-noise objective with respect to the latent
/// parameters, for gradient checks and the ascent loop.
struct LatentGradients {
  Vector d_mu;
  Vector d_log_sigma;
  double value = 0.0;
};
LatentGradients attribution_objective_gradients(const VaeModel& model, const Vector& x_anom,
                                                const LatentGaussian& q,
                                                const std::vector<Index>& phi,
                                                const Matrix& eps);

/// Gradient ascent on the latent distribution. Each step refreshes the
/// ignored set from the current expected probabilities, then moves
/// (mu, log sigma) uphill on the masked objective; one noise batch is drawn
/// per K phase so the objective stays deterministic during ascent. When a
/// phase converges below gamma, K grows by k_inc and the latent resets to the
/// encoder posterior. Gives up (converged = false, best latent seen) when K
/// would pass k_max.
ExplorationResult explore_latent(const VaeModel& model, const Vector& x_anom,
                                 const AttributionConfig& config, Rng& rng);

/// Threshold rule on the expected probabilities under q.
std::vector<Index> estimate_psi(const VaeModel& model, const Vector& x_anom,
                                const LatentGaussian& q, Rng& rng);

/// Signed deviation of each dimension from the decoder's expectation under q,
/// in units of the decoder's expected standard deviation.
Vector contribution_degree(const VaeModel& model, const Vector& x_anom,
                           const LatentGaussian& q, Rng& rng);

/// Full pipeline: explore, then threshold and score dimensions with one
/// shared final noise batch (so psi matches per_dim_expected_prob exactly).
AttributionResult attribute(const VaeModel& model, const Vector& x_anom,
                            const AttributionConfig& config, Rng& rng);

}  // namespace vaeattr
