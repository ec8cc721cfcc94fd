#include "bbo/linear_bbo.hpp"

#include <cmath>
#include <string>

namespace bbo {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw numeric_error(msg);
}

Matrix second_moment(const std::vector<Vec>& samples, std::size_t n) {
  require(!samples.empty(), "state-weighting sample set is empty");
  Matrix m(n, n);
  for (const Vec& v : samples) {
    require(v.size() == n, "weighting sample dimension mismatch");
    add_outer(m, v, v, 1.0);
  }
  return scale(m, 1.0 / static_cast<double>(samples.size()));
}

}  // namespace

LinearPosterior::LinearPosterior(Vec prior_mean, double prior_variance,
                                 double noise_variance, double discount)
    : LinearPosterior(std::move(prior_mean),
                      Matrix::diagonal(Vec(0, 0.0)),  // placeholder, fixed below
                      noise_variance, discount) {
  require(prior_variance > 0.0, "prior variance must be positive");
  sigma0 = scale(Matrix::identity(n), prior_variance);
  sigma0_inv = scale(Matrix::identity(n), 1.0 / prior_variance);
}

LinearPosterior::LinearPosterior(Vec prior_mean, Matrix prior_cov,
                                 double noise_variance, double discount)
    : n(prior_mean.size()),
      phi0(std::move(prior_mean)),
      sigma0(std::move(prior_cov)),
      sigma2(noise_variance),
      gamma(discount),
      f(n, n),
      g(n, n),
      h(n, 0.0) {
  require(n > 0, "posterior needs at least one feature");
  require(sigma2 > 0.0, "noise variance must be positive");
  require(gamma >= 0.0 && gamma < 1.0, "discount must lie in [0, 1)");
  if (sigma0.rows == 0) return;  // delegated isotropic constructor fills it in
  require(sigma0.rows == n && sigma0.cols == n, "prior covariance shape mismatch");
  sigma0_inv = invert_spd(sigma0);
}

void posterior_update(LinearPosterior& post, const Vec& v, double r,
                      const Vec& v_next, double weight) {
  require(v.size() == post.n && v_next.size() == post.n,
          "posterior_update: feature dimension mismatch");
  add_outer(post.f, v, v, weight);
  add_outer(post.g, v, v_next, weight);
  axpy(post.h, v, weight * r);
  ++post.count;
}

void posterior_update(LinearPosterior& post, const Transition& t,
                      const FeatureMap& features) {
  const FeaturizedTransition ft = featurize(t, features);
  posterior_update(post, ft.v, ft.r, ft.v_next, ft.weight);
}

void posterior_update(LinearPosterior& post, const Dataset& ds,
                      const FeatureMap& features) {
  for (const Transition& t : ds.transitions) posterior_update(post, t, features);
}

namespace {

// Posterior precision Σ₀⁻¹ + F/σ².
Matrix precision(const LinearPosterior& post) {
  return add(post.sigma0_inv, scale(post.f, 1.0 / post.sigma2));
}

// Right-hand side Σ₀⁻¹φ₀ + (h + γGω)/σ².
Vec mean_rhs(const LinearPosterior& post, const Vec& omega) {
  Vec rhs = matvec(post.sigma0_inv, post.phi0);
  axpy(rhs, post.h, 1.0 / post.sigma2);
  axpy(rhs, matvec(post.g, omega), post.gamma / post.sigma2);
  return rhs;
}

}  // namespace

Vec posterior_mean(const LinearPosterior& post, const Vec& omega) {
  require(omega.size() == post.n, "posterior_mean: omega dimension mismatch");
  return solve_spd(precision(post), mean_rhs(post, omega));
}

Matrix posterior_cov(const LinearPosterior& post) {
  return invert_spd(precision(post));
}

double bayesian_bellman_operator(const LinearPosterior& post, const Vec& omega,
                                 const Vec& v) {
  require(v.size() == post.n, "bayesian_bellman_operator: dimension mismatch");
  return dot(v, posterior_mean(post, omega));
}

Predictive predictive(const LinearPosterior& post, const Vec& omega, const Vec& v) {
  require(v.size() == post.n, "predictive: dimension mismatch");
  Predictive out;
  out.mean = bayesian_bellman_operator(post, omega, v);
  out.epistemic = dot(v, matvec(posterior_cov(post), v));
  out.aleatoric = post.sigma2;
  out.variance = out.epistemic + out.aleatoric;
  return out;
}

Vec MsbbeProblem::phi_of(const Vec& omega) const {
  Vec phi = matvec(k, omega);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += c[i];
  return phi;
}

double MsbbeProblem::value(const Vec& omega) const {
  Vec d = omega;
  axpy(d, phi_of(omega), -1.0);
  return dot(d, matvec(m, d));
}

Vec MsbbeProblem::gradient(const Vec& omega) const {
  Vec d = omega;
  axpy(d, phi_of(omega), -1.0);
  const Vec md = matvec(m, d);
  // 2 (I − K)ᵀ M d
  Vec grad = md;
  axpy(grad, matvec_transposed(k, md), -1.0);
  for (double& x : grad) x *= 2.0;
  return grad;
}

MsbbeProblem make_msbbe_problem(const LinearPosterior& post,
                                const std::vector<Vec>& weighting_samples) {
  MsbbeProblem prob;
  const Matrix sigma_n = posterior_cov(post);
  prob.k = scale(matmul(sigma_n, post.g), post.gamma / post.sigma2);
  Vec rhs = matvec(post.sigma0_inv, post.phi0);
  axpy(rhs, post.h, 1.0 / post.sigma2);
  prob.c = matvec(sigma_n, rhs);
  prob.m = second_moment(weighting_samples, post.n);
  return prob;
}

double msbbe_value(const LinearPosterior& post, const Vec& omega,
                   const std::vector<Vec>& weighting_samples) {
  const Vec phi = posterior_mean(post, omega);
  double acc = 0.0;
  for (const Vec& v : weighting_samples) {
    const double diff = dot(v, omega) - dot(v, phi);
    acc += diff * diff;
  }
  return acc / static_cast<double>(weighting_samples.size());
}

Vec msbbe_gradient_linear(const LinearPosterior& post, const Vec& omega,
                          const std::vector<Vec>& weighting_samples) {
  return make_msbbe_problem(post, weighting_samples).gradient(omega);
}

Vec fit_exact_omega(const Dataset& ds, const FeatureMap& features, const Vec& phi0,
                    const Matrix& sigma0, double sigma2, double gamma) {
  require(sigma2 > 0.0, "fit_exact_omega: noise variance must be positive");
  IncrementalSolver solver;
  solver.d_inv = sigma0;  // (Σ₀⁻¹)⁻¹
  solver.chi = matvec(invert_spd(sigma0), phi0);

  std::size_t index = 0;
  for (const Transition& t : ds.transitions) {
    const FeaturizedTransition ft = featurize(t, features);
    Vec u = ft.v;
    for (double& x : u) x *= ft.weight / sigma2;
    Vec z = ft.v;
    axpy(z, ft.v_next, -gamma);
    try {
      solver.d_inv = sherman_morrison_update(solver.d_inv, u, z);
    } catch (const numeric_error&) {
      throw numeric_error("fit_exact_omega: singular rank-1 update at transition " +
                          std::to_string(index));
    }
    axpy(solver.chi, ft.v, ft.weight * ft.r / sigma2);
    ++index;
  }
  return matvec(solver.d_inv, solver.chi);
}

Vec fit_exact_omega_frequentist(const Dataset& ds, const FeatureMap& features,
                                double gamma, double epsilon_large) {
  const std::size_t n = features.dim();
  require(epsilon_large > 1.0, "fit_exact_omega_frequentist: epsilon must be large");
  require(ds.size() >= n,
          "fit_exact_omega_frequentist: need at least as many transitions as features");
  IncrementalSolver solver;
  solver.d_inv = scale(Matrix::identity(n), epsilon_large);
  solver.chi = Vec(n, 0.0);

  std::size_t index = 0;
  for (const Transition& t : ds.transitions) {
    const FeaturizedTransition ft = featurize(t, features);
    Vec u = ft.v;
    for (double& x : u) x *= ft.weight;
    Vec z = ft.v;
    axpy(z, ft.v_next, -gamma);
    try {
      solver.d_inv = sherman_morrison_update(solver.d_inv, u, z);
    } catch (const numeric_error&) {
      throw numeric_error(
          "fit_exact_omega_frequentist: singular rank-1 update at transition " +
          std::to_string(index));
    }
    axpy(solver.chi, ft.v, ft.weight * ft.r);
    ++index;
  }

  // Remove the initial ridge (1/ε)I one coordinate at a time, which leaves
  // the pure-data normal matrix behind.
  for (std::size_t i = 0; i < n; ++i) {
    Vec u(n, 0.0), z(n, 0.0);
    u[i] = -1.0 / epsilon_large;
    z[i] = 1.0;
    try {
      solver.d_inv = sherman_morrison_update(solver.d_inv, u, z);
    } catch (const numeric_error&) {
      throw numeric_error(
          "fit_exact_omega_frequentist: data normal matrix singular at coordinate " +
          std::to_string(i) + " during prior removal");
    }
  }
  return matvec(solver.d_inv, solver.chi);
}

}  // namespace bbo
