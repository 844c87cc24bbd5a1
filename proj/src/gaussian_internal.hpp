#pragma once

// Shared internals for the Gaussian encoder/decoder heads. The per-dimension
// log densities and their accumulation order are centralized here so that the
// plain ELBO and the masked exploration objective stay bit-identical when the
// ignored set is empty and the noise is shared.

#include "vaeattr/core.hpp"
#include "vaeattr/vae.hpp"

namespace vaeattr::internal {

inline constexpr double kHalfLog2Pi = 0.918938533204672741780329736406;  // 0.5 ln(2 pi)

inline GaussianHead split_gaussian_head(Vector out, double lo, double hi) {
  const Index half = out.size() / 2;
  GaussianHead head;
  head.mu = out.head(half);
  head.raw_log_sigma = out.tail(half);
  head.log_sigma = head.raw_log_sigma.cwiseMax(lo).cwiseMin(hi);
  return head;
}

// Zeroes gradient entries where the sigma clamp is active.
inline void gate_clamped(const Vector& raw, double lo, double hi, Vector& grad) {
  for (Index i = 0; i < raw.size(); ++i) {
    if (raw[i] <= lo || raw[i] >= hi) grad[i] = 0.0;
  }
}

inline Matrix draw_noise(Rng& rng, Index n_samples, Index dim) {
  Matrix eps(n_samples, dim);
  for (Index l = 0; l < n_samples; ++l)
    for (Index j = 0; j < dim; ++j) eps(l, j) = rng.standard_normal();
  return eps;
}

inline double kl_closed_form(const Vector& mu, const Vector& log_sigma) {
  const auto sigma2 = (2.0 * log_sigma.array()).exp();
  return 0.5 * (sigma2 + mu.array().square() - 1.0 - 2.0 * log_sigma.array()).sum();
}

struct PerDimDensity {
  Vector log_pdf;   // log N(x_i; mu_i, sigma_i^2)
  Vector inv_var;   // 1 / sigma_i^2
  Vector residual;  // x_i - mu_i
};

inline PerDimDensity per_dim_density(const Vector& x, const GaussianHead& p) {
  PerDimDensity d;
  d.residual = x - p.mu;
  d.inv_var = (-2.0 * p.log_sigma.array()).exp().matrix();
  d.log_pdf = (-kHalfLog2Pi - p.log_sigma.array() -
               0.5 * (d.residual.array().square() * d.inv_var.array()))
                  .matrix();
  return d;
}

// d(log_pdf_i)/d(mu_i) and d(log_pdf_i)/d(log_sigma_i), the latter gated by
// the clamp on raw log sigma.
inline void density_output_grad(const PerDimDensity& d, const GaussianHead& p, double lo,
                                double hi, double scale, Vector& out_grad) {
  const Index n = d.log_pdf.size();
  out_grad.resize(2 * n);
  out_grad.head(n) = scale * d.residual.cwiseProduct(d.inv_var);
  Vector g_ls = scale * (d.residual.array().square() * d.inv_var.array() - 1.0).matrix();
  gate_clamped(p.raw_log_sigma, lo, hi, g_ls);
  out_grad.tail(n) = g_ls;
}

}  // namespace vaeattr::internal
