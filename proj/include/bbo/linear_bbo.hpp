#pragma once

// Conjugate linear-Gaussian model of the Bellman operator: closed-form
// posterior statistics, predictive uncertainty, the exact mean-squared
// Bellman-embedding error (MSBBE) and its gradient, and streaming
// fixed-point solvers with Bayesian and uninformative priors.

#include <cstddef>

#include "bbo/envs.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

// Gaussian posterior over the operator parameters φ given the target weights
// ω. The ω-dependence is *not* baked into stored state: the sufficient
// statistics (F, G, h) accumulate additively over transitions, and the
// ω-specific mean φ_ω is assembled on demand with one SPD solve,
//
//   Σ_N  = (Σ₀⁻¹ + F/σ²)⁻¹,          F = Σᵢ wᵢ vᵢvᵢᵀ,
//   φ_ω  = Σ_N (Σ₀⁻¹φ₀ + (h + γ·Gω)/σ²),   G = Σᵢ wᵢ vᵢv′ᵢᵀ,  h = Σᵢ wᵢ vᵢrᵢ.
struct LinearPosterior {
  std::size_t n = 0;
  Vec phi0;
  Matrix sigma0;
  Matrix sigma0_inv;
  double sigma2 = 1.0;
  double gamma = 0.0;
  Matrix f;
  Matrix g;
  Vec h;
  std::size_t count = 0;

  // Isotropic prior Σ₀ = prior_variance·I (the standard configuration).
  LinearPosterior(Vec prior_mean, double prior_variance, double noise_variance,
                  double discount);
  // Full-matrix prior path (used by tests and the structured variants).
  LinearPosterior(Vec prior_mean, Matrix prior_cov, double noise_variance,
                  double discount);
};

// Accumulates one transition into the sufficient statistics.
void posterior_update(LinearPosterior& post, const Vec& v, double r,
                      const Vec& v_next, double weight = 1.0);
void posterior_update(LinearPosterior& post, const Transition& t,
                      const FeatureMap& features);
void posterior_update(LinearPosterior& post, const Dataset& ds,
                      const FeatureMap& features);

// φ_ω: posterior mean of the operator parameters at target weights ω.
Vec posterior_mean(const LinearPosterior& post, const Vec& omega);
// Σ_N: posterior covariance (ω-independent).
Matrix posterior_cov(const LinearPosterior& post);

// Predictive mean v'φ_ω of the Bellman-operator value at feature vector v.
double bayesian_bellman_operator(const LinearPosterior& post, const Vec& omega,
                                 const Vec& v);

struct Predictive {
  double mean = 0.0;
  double epistemic = 0.0;  // vᵀ Σ_N v
  double aleatoric = 0.0;  // σ²
  double variance = 0.0;   // epistemic + aleatoric
};
Predictive predictive(const LinearPosterior& post, const Vec& omega, const Vec& v);

// MSBBE over an empirical state-weighting sample {v_s}:
//   MSBBE(ω) = (1/S) Σ_s (v_sᵀ(ω − φ_ω))².
// The gradient is exact (φ_ω is affine in ω):
//   ∇MSBBE(ω) = 2 (I − (γ/σ²) Σᵢwᵢv′ᵢvᵢᵀ Σ_Nᵀ) M (ω − φ_ω),  M = (1/S) Σ_s v_sv_sᵀ.
double msbbe_value(const LinearPosterior& post, const Vec& omega,
                   const std::vector<Vec>& weighting_samples);
Vec msbbe_gradient_linear(const LinearPosterior& post, const Vec& omega,
                          const std::vector<Vec>& weighting_samples);

// Precomputed affine form of the same objective for optimization loops:
// φ_ω = c + K ω, MSBBE(ω) = (ω − φ_ω)ᵀ M (ω − φ_ω), ∇ = 2(I−K)ᵀM(ω − φ_ω).
struct MsbbeProblem {
  Matrix k;
  Vec c;
  Matrix m;

  Vec phi_of(const Vec& omega) const;
  double value(const Vec& omega) const;
  Vec gradient(const Vec& omega) const;
};
MsbbeProblem make_msbbe_problem(const LinearPosterior& post,
                                const std::vector<Vec>& weighting_samples);

// Streaming rank-1 state for the exact fixed point ω⋆ = D⁻¹χ with
// D = Σ₀⁻¹ + (1/σ²) Σᵢ wᵢ vᵢ(vᵢ − γv′ᵢ)ᵀ and χ = Σ₀⁻¹φ₀ + (1/σ²) Σᵢ wᵢ vᵢrᵢ.
struct IncrementalSolver {
  Matrix d_inv;
  Vec chi;
};

// Exact MSBBE minimizer under the conjugate model: satisfies ω⋆ = φ_{ω⋆}.
// Throws (naming the transition index) on a singular rank-1 update.
Vec fit_exact_omega(const Dataset& ds, const FeatureMap& features, const Vec& phi0,
                    const Matrix& sigma0, double sigma2, double gamma);

// Uninformative-prior variant: starts from D⁻¹ = ε·I (ε ≫ 1), streams the
// data, then removes the initial ridge with one rank-1 downdate per
// coordinate. Equals the least-squares temporal-difference solution.
Vec fit_exact_omega_frequentist(const Dataset& ds, const FeatureMap& features,
                                double gamma, double epsilon_large = 1e6);

}  // namespace bbo
