#pragma once

// Randomized-prior approximate posterior: an ensemble of independently
// perturbed MAP problems. Each member carries an immutable Gaussian
// parameter-space perturbation ε_l, a fast critic ψ_l fit to Bellman targets
// under a ridge anchored at ε_l, and a lagged target net ω_l that drifts
// toward the critic. Sampling a member uniformly samples the approximate
// posterior; for linear-Gaussian problems the induced distribution over
// exact ridge solutions reproduces the conjugate posterior, which
// linear_rp_moment_check verifies against closed forms.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "bbo/mlp.hpp"
#include "bbo/nonlinear_pe.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

// ---- Members & ensemble ---------------------------------------------------------

// One perturbed-MAP problem. eps is drawn once and never mutated; psi and
// omega share its dimension.
struct RpMember {
  std::size_t index = 0;
  std::unique_ptr<ValueModel> psi;    // fast critic
  std::unique_ptr<ValueModel> omega;  // lagged target
  double lambda = 0.0;                // ridge weight, 1/sigma0^2
  double sigma_sq = 1.0;              // observation noise variance
  double projection_radius = 1e6;
  StepMode mode = StepMode::sgd;
  AdamState adam;
  bool projection_hit = false;

  RpMember() = default;
  // Clones `model` into both nets. Requires eps to match its parameter count.
  RpMember(std::size_t l, const ValueModel& model, Vec eps_l, double lambda_,
           double sigma_sq_);

  const Vec& eps() const { return eps_; }

 private:
  Vec eps_;
};

struct RpEnsemble {
  std::vector<RpMember> members;

  std::size_t size() const { return members.size(); }
  // Aggregate prediction (1/L) Σ_l over the members' target nets.
  void aggregate_values(const std::vector<Vec>& x, Vec& out) const;
};

// ---- Operations -------------------------------------------------------------------

// L i.i.d. draws from N(0, sigma0² I_dim). sigma0 = 0 is the exact collapse
// limit: every perturbation is the zero vector and the members reduce to
// plain MAP.
std::vector<Vec> draw_prior_noise(std::size_t count, double sigma0,
                                  std::size_t dim, Rng& rng);

// Perturbed MAP objective against frozen targets from the member's own
// target net, b_i = r_i + γ V_ω(x'_i) (zeroed on done):
//   1/(2σ²) · mean_i w_i (b_i − V_ψ(x_i))²  +  λ/(2 n_total) · ‖ψ − ε‖²
// n_total is the full dataset size the batch was drawn from, which makes the
// stochastic gradient unbiased for the per-datum-scaled MAP objective and the
// full-batch minimizer exactly the ridge solution
//   (XᵀX/σ² + λI)⁻¹(Xᵀb/σ² + λε)
// on linear members. Throws numeric_error on a non-finite value.
double rp_loss(const RpMember& member, const NonlinearBatch& batch,
               double gamma, std::size_t n_total);

// One projected step on ψ only (ω frozen), stepsize alpha, mode and optimizer
// state from the member. Returns the pre-step loss.
double rp_fast_step(RpMember& member, const NonlinearBatch& batch, double gamma,
                    double alpha, std::size_t n_total);

// ω ← P(ω − β(ω − ψ)): the lagged target-network drift.
void rp_slow_step(RpMember& member, double beta);

// Uniform Thompson draw over members.
std::size_t sample_posterior_member(const RpEnsemble& ensemble, Rng& rng);

// ---- Exact linear-Gaussian diagnostic ----------------------------------------------

// Fixed-design regression instance with Gaussian noise and a zero-mean
// Gaussian parameter prior: targets b over rows of x, noise variance
// sigma_sq, prior variance sigma0_sq.
struct LinearRpProblem {
  Matrix x;  // N × n design
  Vec b;     // N targets
  double sigma_sq = 1.0;
  double sigma0_sq = 1.0;
};

// Draws n_eps perturbation pairs (ε ~ N(0,σ₀²I), η ~ N(0,σ²I_N)), solves each
// perturbed ridge problem exactly,
//   ψ⋆ = M⁻¹ (Xᵀ(b+η)/σ² + ε/σ₀²),  M = XᵀX/σ² + I/σ₀²,
// and compares the empirical first two moments against the exact conjugate
// posterior N(M⁻¹Xᵀb/σ², M⁻¹). Returns (mean error in standard-error units —
// the worst coordinate-wise |m̂−m|/SE — and the relative Frobenius error of
// the covariance).
std::pair<double, double> linear_rp_moment_check(const LinearRpProblem& problem,
                                                 std::size_t n_eps, Rng& rng);

}  // namespace bbo
