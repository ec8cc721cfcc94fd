#include "bbo/rp_ensemble.hpp"

#include <cmath>
#include <string>

namespace bbo {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw numeric_error(msg);
}

// Loss and (optionally) its psi-gradient; shared by rp_loss and rp_fast_step.
double rp_loss_grad(const RpMember& member, const NonlinearBatch& batch,
                    double gamma, std::size_t n_total, Vec* grad,
                    const char* who) {
  const std::size_t b = batch.size();
  require(b > 0, std::string(who) + ": empty batch");
  require(n_total >= 1, std::string(who) + ": n_total must be at least 1");
  require(member.psi != nullptr && member.omega != nullptr,
          std::string(who) + ": uninitialized member");
  require(member.sigma_sq > 0.0,
          std::string(who) + ": noise variance must be positive");

  Vec v, v_next;
  member.psi->values(batch.x, v);
  member.omega->values(batch.x_next, v_next);

  const double inv_b = 1.0 / static_cast<double>(b);
  const double inv_var = 1.0 / member.sigma_sq;
  Vec coef(b, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double target =
        batch.r[i] + (batch.done[i] != 0 ? 0.0 : gamma * v_next[i]);
    const double resid = v[i] - target;
    loss += 0.5 * batch.weight[i] * resid * resid * inv_var * inv_b;
    coef[i] = batch.weight[i] * resid * inv_var * inv_b;
  }
  const Vec& psi = member.psi->params();
  const Vec& eps = member.eps();
  require(psi.size() == eps.size(), std::string(who) + ": eps size mismatch");
  const double reg_w = member.lambda / static_cast<double>(n_total);
  if (grad != nullptr) {
    grad->assign(psi.size(), 0.0);
    member.psi->accumulate_value_grad(batch.x, coef, *grad);
  }
  for (std::size_t j = 0; j < psi.size(); ++j) {
    const double d = psi[j] - eps[j];
    loss += 0.5 * reg_w * d * d;
    if (grad != nullptr) (*grad)[j] += reg_w * d;
  }
  if (!std::isfinite(loss)) {
    throw numeric_error(std::string(who) + ": non-finite loss (|psi|_inf=" +
                        std::to_string(norm_inf(psi)) + ")");
  }
  return loss;
}

}  // namespace

// ---- Members & ensemble ---------------------------------------------------------

RpMember::RpMember(std::size_t l, const ValueModel& model, Vec eps_l,
                   double lambda_, double sigma_sq_)
    : index(l),
      psi(model.clone()),
      omega(model.clone()),
      lambda(lambda_),
      sigma_sq(sigma_sq_),
      adam(model.param_count()),
      eps_(std::move(eps_l)) {
  require(eps_.size() == model.param_count(),
          "RpMember: eps dimension must match the parameter count");
  require(lambda >= 0.0, "RpMember: ridge weight must be nonnegative");
  require(sigma_sq > 0.0, "RpMember: noise variance must be positive");
}

void RpEnsemble::aggregate_values(const std::vector<Vec>& x, Vec& out) const {
  require(!members.empty(), "RpEnsemble: no members");
  out.assign(x.size(), 0.0);
  Vec one;
  for (const RpMember& m : members) {
    m.omega->values(x, one);
    axpy(out, one, 1.0 / static_cast<double>(members.size()));
  }
}

// ---- Operations -------------------------------------------------------------------

std::vector<Vec> draw_prior_noise(std::size_t count, double sigma0,
                                  std::size_t dim, Rng& rng) {
  require(count >= 1, "draw_prior_noise: need at least one draw");
  require(dim >= 1, "draw_prior_noise: dimension must be positive");
  require(sigma0 >= 0.0, "draw_prior_noise: scale must be nonnegative");
  std::vector<Vec> out(count, Vec(dim, 0.0));
  for (Vec& e : out)
    for (double& v : e) v = sigma0 * rng.normal();
  return out;
}

double rp_loss(const RpMember& member, const NonlinearBatch& batch,
               double gamma, std::size_t n_total) {
  return rp_loss_grad(member, batch, gamma, n_total, nullptr, "rp_loss");
}

double rp_fast_step(RpMember& member, const NonlinearBatch& batch, double gamma,
                    double alpha, std::size_t n_total) {
  Vec grad;
  const double loss =
      rp_loss_grad(member, batch, gamma, n_total, &grad, "rp_fast_step");
  projected_step(member.psi->params(), grad, alpha, member.mode, &member.adam,
                 member.projection_radius, &member.projection_hit,
                 "rp_fast_step");
  return loss;
}

void rp_slow_step(RpMember& member, double beta) {
  require(member.psi != nullptr && member.omega != nullptr,
          "rp_slow_step: uninitialized member");
  Vec& om = member.omega->params();
  const Vec& ps = member.psi->params();
  require(om.size() == ps.size(), "rp_slow_step: net size mismatch");
  for (std::size_t j = 0; j < om.size(); ++j) om[j] -= beta * (om[j] - ps[j]);
  if (norm2(om) > member.projection_radius) {
    om = project_ball(om, member.projection_radius);
    if (!member.projection_hit) {
      member.projection_hit = true;
      std::fprintf(stderr,
                   "[rp_ensemble] rp_slow_step: projection radius %g bound\n",
                   member.projection_radius);
    }
  }
}

std::size_t sample_posterior_member(const RpEnsemble& ensemble, Rng& rng) {
  require(ensemble.size() >= 1, "sample_posterior_member: empty ensemble");
  return static_cast<std::size_t>(rng.uniform_int(ensemble.size()));
}

// ---- Exact linear-Gaussian diagnostic ----------------------------------------------

std::pair<double, double> linear_rp_moment_check(const LinearRpProblem& problem,
                                                 std::size_t n_eps, Rng& rng) {
  const std::size_t n = problem.x.cols;
  const std::size_t rows = problem.x.rows;
  require(n >= 1, "linear_rp_moment_check: empty design");
  require(problem.b.size() == rows,
          "linear_rp_moment_check: target length must match design rows");
  require(problem.sigma_sq > 0.0 && problem.sigma0_sq > 0.0,
          "linear_rp_moment_check: variances must be positive");
  require(n_eps >= 2, "linear_rp_moment_check: need at least two draws");

  const double inv_var = 1.0 / problem.sigma_sq;
  const double inv_prior = 1.0 / problem.sigma0_sq;

  Matrix m(n, n);
  Vec xtb(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      xtb[i] += problem.x.at(r, i) * problem.b[r] * inv_var;
      for (std::size_t j = 0; j < n; ++j)
        m.at(i, j) += problem.x.at(r, i) * problem.x.at(r, j) * inv_var;
    }
  }
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) += inv_prior;

  const Vec exact_mean = solve_spd(m, xtb);
  const Matrix exact_cov = invert_spd(m);

  const double sigma0 = std::sqrt(problem.sigma0_sq);
  const double sigma = std::sqrt(problem.sigma_sq);
  Matrix draws(n_eps, n);
  Vec mean_hat(n, 0.0);
  Vec rhs(n, 0.0);
  for (std::size_t k = 0; k < n_eps; ++k) {
    rhs = xtb;
    for (std::size_t r = 0; r < rows; ++r) {
      const double eta = sigma * rng.normal();
      for (std::size_t i = 0; i < n; ++i)
        rhs[i] += problem.x.at(r, i) * eta * inv_var;
    }
    for (std::size_t i = 0; i < n; ++i)
      rhs[i] += sigma0 * rng.normal() * inv_prior;
    const Vec psi = solve_spd(m, rhs);
    for (std::size_t i = 0; i < n; ++i) {
      draws.at(k, i) = psi[i];
      mean_hat[i] += psi[i] / static_cast<double>(n_eps);
    }
  }

  Matrix cov_hat(n, n);
  for (std::size_t k = 0; k < n_eps; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        cov_hat.at(i, j) += (draws.at(k, i) - mean_hat[i]) *
                            (draws.at(k, j) - mean_hat[j]) /
                            static_cast<double>(n_eps - 1);

  double mean_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double se =
        std::sqrt(exact_cov.at(i, i) / static_cast<double>(n_eps));
    mean_err = std::max(mean_err, std::abs(mean_hat[i] - exact_mean[i]) / se);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = cov_hat.at(i, j) - exact_cov.at(i, j);
      num += d * d;
      den += exact_cov.at(i, j) * exact_cov.at(i, j);
    }
  }
  return {mean_err, std::sqrt(num / den)};
}

}  // namespace bbo
