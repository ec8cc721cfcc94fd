#include "bbo/linear_baselines.hpp"

namespace bbo {
namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw numeric_error(msg);
}

double td_error(const Vec& omega, const Vec& v, double r, const Vec& v_next,
                double gamma) {
  return r + gamma * dot(v_next, omega) - dot(v, omega);
}

}  // namespace

void td0_step(Vec& omega, const Vec& v, double r, const Vec& v_next, double weight,
              double gamma, double lr) {
  require(omega.size() == v.size() && v.size() == v_next.size(),
          "td0_step: dimension mismatch");
  axpy(omega, v, lr * weight * td_error(omega, v, r, v_next, gamma));
}

void td0_step(Vec& omega, const Transition& t, const FeatureMap& fm, double gamma,
              double lr) {
  const FeaturizedTransition ft = featurize(t, fm);
  td0_step(omega, ft.v, ft.r, ft.v_next, ft.weight, gamma, lr);
}

namespace {

// Fast-timescale regression of the TD error onto the features.
void zeta_step(TwoTimescaleWeights& w, const Vec& v, double delta, double weight) {
  axpy(w.zeta, v, w.alpha_zeta * weight * (delta - dot(v, w.zeta)));
}

}  // namespace

void gtd2_step(TwoTimescaleWeights& w, const Vec& v, double r, const Vec& v_next,
               double weight, double gamma) {
  require(w.omega.size() == v.size() && v.size() == v_next.size(),
          "gtd2_step: dimension mismatch");
  const double delta = td_error(w.omega, v, r, v_next, gamma);
  const double vz = dot(v, w.zeta);
  zeta_step(w, v, delta, weight);
  // ω += α_ω·w·(v − γv′)(vᵀζ)
  axpy(w.omega, v, w.alpha_omega * weight * vz);
  axpy(w.omega, v_next, -w.alpha_omega * weight * gamma * vz);
}

void tdc_step(TwoTimescaleWeights& w, const Vec& v, double r, const Vec& v_next,
              double weight, double gamma) {
  require(w.omega.size() == v.size() && v.size() == v_next.size(),
          "tdc_step: dimension mismatch");
  const double delta = td_error(w.omega, v, r, v_next, gamma);
  const double vz = dot(v, w.zeta);
  zeta_step(w, v, delta, weight);
  // ω += α_ω·w·(δ·v − γ·v′·(vᵀζ))
  axpy(w.omega, v, w.alpha_omega * weight * delta);
  axpy(w.omega, v_next, -w.alpha_omega * weight * gamma * vz);
}

void gtd2_step(TwoTimescaleWeights& w, const Transition& t, const FeatureMap& fm,
               double gamma) {
  const FeaturizedTransition ft = featurize(t, fm);
  gtd2_step(w, ft.v, ft.r, ft.v_next, ft.weight, gamma);
}

void tdc_step(TwoTimescaleWeights& w, const Transition& t, const FeatureMap& fm,
              double gamma) {
  const FeaturizedTransition ft = featurize(t, fm);
  tdc_step(w, ft.v, ft.r, ft.v_next, ft.weight, gamma);
}

Vec lstd_fit(const Dataset& ds, const FeatureMap& fm, double gamma) {
  const std::size_t n = fm.dim();
  Matrix a(n, n);
  Vec b(n, 0.0);
  for (const Transition& t : ds.transitions) {
    const FeaturizedTransition ft = featurize(t, fm);
    Vec z = ft.v;
    axpy(z, ft.v_next, -gamma);
    add_outer(a, ft.v, z, ft.weight);
    axpy(b, ft.v, ft.weight * ft.r);
  }
  try {
    return solve_dense(a, b);
  } catch (const numeric_error&) {
    throw numeric_error(
        "lstd_fit: system matrix is singular; add a small ridge epsilon or more data");
  }
}

Vec brm_fit(const Dataset& ds, const FeatureMap& fm, double gamma) {
  const std::size_t n = fm.dim();
  Matrix a(n, n);
  Vec b(n, 0.0);
  for (const Transition& t : ds.transitions) {
    const FeaturizedTransition ft = featurize(t, fm);
    Vec z = ft.v;
    axpy(z, ft.v_next, -gamma);
    add_outer(a, z, z, ft.weight);
    axpy(b, z, ft.weight * ft.r);
  }
  try {
    return solve_spd(a, b);
  } catch (const numeric_error&) {
    throw numeric_error(
        "brm_fit: residual normal matrix is singular; add a ridge or more data");
  }
}

}  // namespace bbo
