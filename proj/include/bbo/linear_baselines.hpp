#pragma once

// Frequentist linear policy-evaluation baselines: semi-gradient TD(0), the
// two-timescale gradient-TD pair (GTD2 / TDC), batch LSTD and naive
// Bellman-residual minimization.

#include "bbo/envs.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

// Main weights ω plus the auxiliary regression weights ζ that track
// E[vvᵀ]⁻¹ E[v·δ] on the fast timescale.
struct TwoTimescaleWeights {
  Vec omega;
  Vec zeta;
  double alpha_omega = 0.0;
  double alpha_zeta = 0.0;

  TwoTimescaleWeights(std::size_t n, double a_omega, double a_zeta)
      : omega(n, 0.0), zeta(n, 0.0), alpha_omega(a_omega), alpha_zeta(a_zeta) {}
};

// Semi-gradient update ω += lr·w·(r + γv′ᵀω − vᵀω)·v.
void td0_step(Vec& omega, const Vec& v, double r, const Vec& v_next, double weight,
              double gamma, double lr);
void td0_step(Vec& omega, const Transition& t, const FeatureMap& fm, double gamma,
              double lr);

// Shared fast-timescale update ζ += α_ζ·w·(δ − vᵀζ)·v followed by the
// variant-specific slow update:
//   GTD2: ω += α_ω·w·(v − γv′)(vᵀζ)
//   TDC:  ω += α_ω·w·(δ·v − γ·v′·(vᵀζ))
void gtd2_step(TwoTimescaleWeights& w, const Vec& v, double r, const Vec& v_next,
               double weight, double gamma);
void tdc_step(TwoTimescaleWeights& w, const Vec& v, double r, const Vec& v_next,
              double weight, double gamma);
void gtd2_step(TwoTimescaleWeights& w, const Transition& t, const FeatureMap& fm,
               double gamma);
void tdc_step(TwoTimescaleWeights& w, const Transition& t, const FeatureMap& fm,
              double gamma);

// Batch TD fixed point: solves [Σ wᵢvᵢ(vᵢ−γv′ᵢ)ᵀ] ω = Σ wᵢvᵢrᵢ.
// Throws (advising a ridge) when the system matrix is singular.
Vec lstd_fit(const Dataset& ds, const FeatureMap& fm, double gamma);

// Naive residual minimizer of Σ wᵢ(rᵢ − (vᵢ−γv′ᵢ)ᵀω)². Biased on stochastic
// transitions (no double-sampling correction); kept as the classical
// comparison point.
Vec brm_fit(const Dataset& ds, const FeatureMap& fm, double gamma);

}  // namespace bbo
