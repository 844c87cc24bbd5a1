#include "vaeattr/attribution.hpp"

#include "gaussian_internal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vaeattr {

using internal::draw_noise;
using internal::kl_closed_form;
using internal::per_dim_density;

namespace {

void require_calibrated(const VaeModel& model, const char* who) {
  if (!model.calibrated) {
    throw std::invalid_argument(std::string(who) + ": model has no calibrated thresholds");
  }
}

std::vector<char> mask_from_indices(const std::vector<Index>& phi, Index n, const char* who) {
  std::vector<char> ignored(static_cast<std::size_t>(n), 0);
  for (Index i : phi) {
    if (i < 0 || i >= n) throw std::invalid_argument(std::string(who) + ": index out of range");
    if (ignored[static_cast<std::size_t>(i)]) {
      throw std::invalid_argument(std::string(who) + ": duplicate index in phi");
    }
    ignored[static_cast<std::size_t>(i)] = 1;
  }
  return ignored;
}

// One pass over the noise batch: expected probabilities, the masked
// objective, and (optionally) its gradient with respect to (mu, log sigma).
// The ignored set is either fixed by the caller or refreshed as the
// k_ignore smallest expected probabilities from this same pass.
struct MaskedEval {
  double objective = 0.0;
  Vector probs;
  std::vector<Index> phi;
  Vector g_mu;
  Vector g_log_sigma;
};

MaskedEval masked_eval(const VaeModel& model, const Vector& x, const LatentGaussian& q,
                       const std::vector<Index>* phi_fixed, int k_ignore, const Matrix& eps,
                       bool want_grads) {
  const Index n = model.input_dim;
  const Index l_count = eps.rows();
  const double lo = model.log_sigma_floor();
  const double hi = model.log_sigma_ceil();
  const Vector sigma_z = q.sigma();

  struct SampleCache {
    ForwardTape tape;
    GaussianHead head;
    internal::PerDimDensity density;
    Vector z;
  };
  std::vector<SampleCache> samples(static_cast<std::size_t>(l_count));

  MaskedEval out;
  out.probs = Vector::Zero(n);
  for (Index l = 0; l < l_count; ++l) {
    auto& s = samples[static_cast<std::size_t>(l)];
    s.z = q.mu + sigma_z.cwiseProduct(eps.row(l).transpose());
    s.head = internal::split_gaussian_head(
        forward(model.decoder, s.z, want_grads ? &s.tape : nullptr), lo, hi);
    s.density = per_dim_density(x, s.head);
    out.probs.array() += s.density.log_pdf.array().exp();
  }
  out.probs /= static_cast<double>(l_count);

  out.phi = phi_fixed ? *phi_fixed : k_smallest_indices(out.probs, k_ignore);
  const auto ignored = mask_from_indices(out.phi, n, "attribution objective");
  const Index k = static_cast<Index>(out.phi.size());
  if (k >= n) {
    throw std::invalid_argument("attribution objective: |phi| = " + std::to_string(k) +
                                " leaves no dimension to score (N = " + std::to_string(n) + ")");
  }
  const double mult = static_cast<double>(n) / static_cast<double>(n - k);

  double recon_sum = 0.0;
  for (Index l = 0; l < l_count; ++l) {
    const auto& log_pdf = samples[static_cast<std::size_t>(l)].density.log_pdf;
    for (Index i = 0; i < n; ++i) {
      if (!ignored[static_cast<std::size_t>(i)]) recon_sum += log_pdf[i];
    }
  }
  const double kl = kl_closed_form(q.mu, q.log_sigma);
  out.objective = mult * (recon_sum / static_cast<double>(l_count)) - kl;

  if (want_grads) {
    out.g_mu = Vector::Zero(model.latent_dim);
    out.g_log_sigma = Vector::Zero(model.latent_dim);
    const double scale = mult / static_cast<double>(l_count);
    for (Index l = 0; l < l_count; ++l) {
      auto& s = samples[static_cast<std::size_t>(l)];
      Vector out_grad;
      internal::density_output_grad(s.density, s.head, lo, hi, scale, out_grad);
      for (Index i : out.phi) {
        out_grad[i] = 0.0;
        out_grad[n + i] = 0.0;
      }
      const Vector g_z = backward(model.decoder, s.tape, out_grad, nullptr);
      out.g_mu += g_z;
      out.g_log_sigma += g_z.cwiseProduct(sigma_z.cwiseProduct(eps.row(l).transpose()));
    }
    out.g_mu -= q.mu;
    out.g_log_sigma -= (sigma_z.array().square() - 1.0).matrix();
  }
  return out;
}

double window_mean(const std::vector<double>& values, std::size_t begin, std::size_t count) {
  double sum = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i) sum += values[i];
  return sum / static_cast<double>(count);
}

}  // namespace

LatentGaussian initial_latent(const VaeModel& model, const Vector& x_anom) {
  return model.encode(x_anom);
}

int initial_k(const VaeModel& model, const Vector& x_anom, Rng& rng) {
  require_calibrated(model, "initial_k");
  const Vector probs = expected_dim_probability(model, x_anom, model.encode(x_anom), rng);
  int k = 0;
  for (Index i = 0; i < probs.size(); ++i)
    if (probs[i] < model.beta) ++k;
  return k;
}

std::vector<Index> k_smallest_indices(const Vector& values, int k) {
  if (k < 0 || k > values.size()) {
    throw std::invalid_argument("k_smallest_indices: k out of range");
  }
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values[a] < values[b]; });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<Index> update_phi(const VaeModel& model, const Vector& x_anom,
                              const LatentGaussian& q, int k, Rng& rng) {
  if (k < 0 || k >= model.input_dim) {
    throw std::invalid_argument("update_phi: k must satisfy 0 <= k < N");
  }
  const Vector probs = expected_dim_probability(model, x_anom, q, rng);
  return k_smallest_indices(probs, k);
}

double attribution_objective_with_noise(const VaeModel& model, const Vector& x_anom,
                                        const LatentGaussian& q,
                                        const std::vector<Index>& phi, const Matrix& eps) {
  return masked_eval(model, x_anom, q, &phi, 0, eps, false).objective;
}

double attribution_objective(const VaeModel& model, const Vector& x_anom,
                             const LatentGaussian& q, const std::vector<Index>& phi,
                             Rng& rng, int l_samples) {
  if (l_samples < 1) throw std::invalid_argument("attribution_objective: l_samples must be >= 1");
  const Matrix eps = draw_noise(rng, l_samples, model.latent_dim);
  return attribution_objective_with_noise(model, x_anom, q, phi, eps);
}

LatentGradients attribution_objective_gradients(const VaeModel& model, const Vector& x_anom,
                                                const LatentGaussian& q,
                                                const std::vector<Index>& phi,
                                                const Matrix& eps) {
  MaskedEval eval = masked_eval(model, x_anom, q, &phi, 0, eps, true);
  return LatentGradients{std::move(eval.g_mu), std::move(eval.g_log_sigma), eval.objective};
}

ExplorationResult explore_latent(const VaeModel& model, const Vector& x_anom,
                                 const AttributionConfig& config, Rng& rng) {
  require_calibrated(model, "explore_latent");
  if (x_anom.size() != model.input_dim) {
    throw std::invalid_argument("explore_latent: input size mismatch");
  }
  const Index n = model.input_dim;
  const int k_inc = config.k_inc > 0
                        ? config.k_inc
                        : static_cast<int>(std::ceil(0.1 * static_cast<double>(n)));
  const int k_max = config.k_max >= 0 ? std::min<int>(config.k_max, static_cast<int>(n) - 1)
                                      : static_cast<int>(n) - 1;
  const int window = std::max(1, config.convergence_window);

  const LatentGaussian init = initial_latent(model, x_anom);
  int k = std::min(initial_k(model, x_anom, rng), k_max);

  ExplorationResult result;
  result.trace.objective.reserve(static_cast<std::size_t>(config.max_iters));
  double best_objective = -std::numeric_limits<double>::infinity();
  LatentGaussian best_q = init;
  int best_k = k;

  const double lo = model.log_sigma_floor();
  const double hi = model.log_sigma_ceil();

  while (true) {
    LatentGaussian q = init;
    const Matrix eps = draw_noise(rng, config.l_samples, model.latent_dim);
    const std::size_t phase_start = result.trace.objective.size();
    bool phase_converged = false;

    for (int step = 0; step < config.max_iters; ++step) {
      MaskedEval eval = masked_eval(model, x_anom, q, nullptr, k, eps, true);
      if (!std::isfinite(eval.objective)) {
        std::ostringstream msg;
        msg << "explore_latent: non-finite objective at K=" << k << ", step " << step
            << "; recent trace:";
        const std::size_t total = result.trace.objective.size();
        for (std::size_t i = total > 10 ? total - 10 : 0; i < total; ++i) {
          msg << ' ' << result.trace.objective[i];
        }
        throw std::runtime_error(msg.str());
      }
      result.trace.objective.push_back(eval.objective);
      result.trace.k.push_back(k);

      const std::size_t phase_len = result.trace.objective.size() - phase_start;
      if (phase_len >= 2 * static_cast<std::size_t>(window)) {
        const double cur = window_mean(result.trace.objective,
                                       result.trace.objective.size() - window, window);
        const double prev = window_mean(result.trace.objective,
                                        result.trace.objective.size() - 2 * window, window);
        if (std::abs(cur - prev) <= config.convergence_rel_tol * std::max(1.0, std::abs(prev))) {
          phase_converged = true;
          break;
        }
      }
      q.mu += config.lr * eval.g_mu;
      q.log_sigma = (q.log_sigma + config.lr * eval.g_log_sigma).cwiseMax(lo).cwiseMin(hi);
    }

    const std::size_t phase_len = result.trace.objective.size() - phase_start;
    const std::size_t tail = std::min<std::size_t>(window, phase_len);
    const double smoothed =
        window_mean(result.trace.objective, result.trace.objective.size() - tail, tail);
    if (smoothed > best_objective) {
      best_objective = smoothed;
      best_q = q;
      best_k = k;
    }
    if (phase_converged && smoothed >= model.gamma) {
      result.q = std::move(q);
      result.final_k = k;
      result.final_objective = smoothed;
      result.converged = true;
      return result;
    }
    if (k + k_inc > k_max) {
      // Out of headroom below gamma: hand back the best latent seen.
      result.q = best_q;
      result.final_k = best_k;
      result.final_objective = best_objective;
      result.converged = best_objective >= model.gamma;
      return result;
    }
    k += k_inc;
  }
}

std::vector<Index> estimate_psi(const VaeModel& model, const Vector& x_anom,
                                const LatentGaussian& q, Rng& rng) {
  require_calibrated(model, "estimate_psi");
  const Vector probs = expected_dim_probability(model, x_anom, q, rng);
  std::vector<Index> psi;
  for (Index i = 0; i < probs.size(); ++i)
    if (probs[i] < model.beta) psi.push_back(i);
  return psi;
}

namespace {

// Expected decoder mean and standard deviation per dimension under q.
void decoder_expectations(const VaeModel& model, const LatentGaussian& q, const Matrix& eps,
                          Vector& mu_bar, Vector& sigma_bar) {
  const Vector sigma_z = q.sigma();
  mu_bar = Vector::Zero(model.input_dim);
  sigma_bar = Vector::Zero(model.input_dim);
  for (Index l = 0; l < eps.rows(); ++l) {
    const Vector z = q.mu + sigma_z.cwiseProduct(eps.row(l).transpose());
    const GaussianHead p = model.decode(z);
    mu_bar += p.mu;
    sigma_bar += p.log_sigma.array().exp().matrix();
  }
  mu_bar /= static_cast<double>(eps.rows());
  sigma_bar /= static_cast<double>(eps.rows());
}

}  // namespace

Vector contribution_degree(const VaeModel& model, const Vector& x_anom,
                           const LatentGaussian& q, Rng& rng) {
  const Matrix eps = draw_noise(rng, model.config.l_eval, model.latent_dim);
  Vector mu_bar, sigma_bar;
  decoder_expectations(model, q, eps, mu_bar, sigma_bar);
  return ((x_anom - mu_bar).array() / sigma_bar.array()).matrix();
}

AttributionResult attribute(const VaeModel& model, const Vector& x_anom,
                            const AttributionConfig& config, Rng& rng) {
  ExplorationResult explored = explore_latent(model, x_anom, config, rng);

  // One shared noise batch for the final read-out keeps psi, the reported
  // probabilities, and the contribution degrees mutually consistent.
  const Matrix eps = draw_noise(rng, model.config.l_eval, model.latent_dim);
  AttributionResult result;
  result.per_dim_expected_prob =
      expected_dim_probability_with_noise(model, x_anom, explored.q, eps);
  for (Index i = 0; i < result.per_dim_expected_prob.size(); ++i) {
    if (result.per_dim_expected_prob[i] < model.beta) result.psi.push_back(i);
  }
  Vector mu_bar, sigma_bar;
  decoder_expectations(model, explored.q, eps, mu_bar, sigma_bar);
  result.contribution_degrees = ((x_anom - mu_bar).array() / sigma_bar.array()).matrix();
  result.final_k = explored.final_k;
  result.final_objective = explored.final_objective;
  result.converged = explored.converged;
  result.trace = std::move(explored.trace);
  return result;
}

}  // namespace vaeattr
