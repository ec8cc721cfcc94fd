#include "bbo/nonlinear_pe.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace bbo {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw numeric_error(msg);
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

void projected_step(Vec& params, const Vec& grad, double lr, StepMode mode,
                    AdamState* adam, double radius, bool* hit_flag,
                    const char* who) {
  switch (mode) {
    case StepMode::sgd:
      axpy(params, grad, -lr);
      break;
    case StepMode::sgd_normalized: {
      const double n = norm2(grad);
      if (n > 0.0) axpy(params, grad, -lr / n);
      break;
    }
    case StepMode::adam: {
      if (adam == nullptr) throw numeric_error("projected_step: adam state missing");
      if (adam->m.size() != params.size()) *adam = AdamState(params.size());
      adam_step(params, grad, *adam, lr);
      break;
    }
  }
  if (norm2(params) > radius) {
    params = project_ball(params, radius);
    if (hit_flag != nullptr && !*hit_flag) {
      *hit_flag = true;
      std::fprintf(stderr, "[nonlinear_pe] %s: projection radius %g bound\n",
                   who, radius);
    }
  }
}

// ---- MlpValueModel ----------------------------------------------------------

MlpValueModel::MlpValueModel(MlpApproximator net) : net_(std::move(net)) {
  require(net_.output_dim() == 1, "MlpValueModel: output dim must be 1");
}

void MlpValueModel::values(const std::vector<Vec>& x, Vec& out) const {
  const std::size_t b = x.size();
  const std::size_t d = net_.input_dim();
  xbuf_ = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i) {
    require(x[i].size() == d, "MlpValueModel: input dim mismatch");
    for (std::size_t j = 0; j < d; ++j) xbuf_.at(i, j) = x[i][j];
  }
  const Matrix& y = mlp_batch_forward(net_, xbuf_, ws_);
  out.assign(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) out[i] = y.at(i, 0);
}

void MlpValueModel::accumulate_value_grad(const std::vector<Vec>& x,
                                          const Vec& coef, Vec& grad) const {
  require(coef.size() == x.size(), "MlpValueModel: coef size mismatch");
  require(grad.size() == net_.params.size(),
          "MlpValueModel: grad size mismatch");
  Vec unused;
  values(x, unused);  // refresh workspace activations for this batch
  Matrix dout(x.size(), 1);
  for (std::size_t i = 0; i < x.size(); ++i) dout.at(i, 0) = coef[i];
  mlp_batch_backward(net_, ws_, dout, grad);
}

void MlpValueModel::per_sample_grads(const std::vector<Vec>& x,
                                     Matrix& out) const {
  const std::size_t p = net_.params.size();
  out = Matrix(x.size(), p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [v, g] = value_and_grad(net_, x[i]);
    (void)v;
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = g[j];
  }
}

std::unique_ptr<ValueModel> MlpValueModel::clone() const {
  return std::make_unique<MlpValueModel>(net_);
}

// ---- LinearValueModel ---------------------------------------------------------

void LinearValueModel::values(const std::vector<Vec>& x, Vec& out) const {
  out.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i].size() == psi_.size(), "LinearValueModel: input dim mismatch");
    out[i] = dot(psi_, x[i]);
  }
}

void LinearValueModel::accumulate_value_grad(const std::vector<Vec>& x,
                                             const Vec& coef, Vec& grad) const {
  require(coef.size() == x.size(), "LinearValueModel: coef size mismatch");
  require(grad.size() == psi_.size(), "LinearValueModel: grad size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) axpy(grad, x[i], coef[i]);
}

void LinearValueModel::per_sample_grads(const std::vector<Vec>& x,
                                        Matrix& out) const {
  out = Matrix(x.size(), psi_.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i].size() == psi_.size(), "LinearValueModel: input dim mismatch");
    for (std::size_t j = 0; j < psi_.size(); ++j) out.at(i, j) = x[i][j];
  }
}

std::unique_ptr<ValueModel> LinearValueModel::clone() const {
  return std::make_unique<LinearValueModel>(psi_);
}

// ---- TriangleValueModel -------------------------------------------------------

void TriangleValueModel::values(const std::vector<Vec>& x, Vec& out) const {
  const Vec v = triangle_value(omega_[0]);
  out.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto s = static_cast<std::size_t>(x[i][0]);
    require(s < 3, "TriangleValueModel: state index out of range");
    out[i] = v[s];
  }
}

void TriangleValueModel::accumulate_value_grad(const std::vector<Vec>& x,
                                               const Vec& coef,
                                               Vec& grad) const {
  require(coef.size() == x.size(), "TriangleValueModel: coef size mismatch");
  require(grad.size() == 1, "TriangleValueModel: grad size mismatch");
  const Vec d = triangle_value_deriv(omega_[0]);
  for (std::size_t i = 0; i < x.size(); ++i)
    grad[0] += coef[i] * d[static_cast<std::size_t>(x[i][0])];
}

void TriangleValueModel::per_sample_grads(const std::vector<Vec>& x,
                                          Matrix& out) const {
  const Vec d = triangle_value_deriv(omega_[0]);
  out = Matrix(x.size(), 1);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.at(i, 0) = d[static_cast<std::size_t>(x[i][0])];
}

std::unique_ptr<ValueModel> TriangleValueModel::clone() const {
  return std::make_unique<TriangleValueModel>(omega_[0]);
}

// ---- Batches ------------------------------------------------------------------

NonlinearBatch make_pe_batch(const Dataset& ds,
                             const std::vector<std::size_t>& idx) {
  NonlinearBatch b;
  b.x.reserve(idx.size());
  b.x_next.reserve(idx.size());
  b.r.reserve(idx.size());
  b.weight.reserve(idx.size());
  b.done.reserve(idx.size());
  for (const std::size_t i : idx) {
    require(i < ds.size(), "make_pe_batch: index out of range");
    const Transition& t = ds.transitions[i];
    b.x.push_back(t.s);
    b.x_next.push_back(t.s_next);
    b.r.push_back(t.r);
    b.weight.push_back(t.weight);
    b.done.push_back(t.done ? 1 : 0);
  }
  return b;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch,
                                        Rng& rng) {
  require(n > 0, "sample_indices: empty source");
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i)
    idx[i] = static_cast<std::size_t>(rng.uniform_int(n));
  return idx;
}

NonlinearBatch triangle_expected_batch() {
  const TabularMdp mdp = triangle_mdp();
  NonlinearBatch b;
  const double states = static_cast<double>(mdp.n_states);
  // Count support first so probability weights average to the expectation
  // under the batch-mean convention: weight = B/S * P(s,s').
  std::size_t support = 0;
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2)
      if (mdp.P[0].at(s, s2) > 0.0) ++support;
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    for (std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
      const double p = mdp.P[0].at(s, s2);
      if (p <= 0.0) continue;
      b.x.push_back({static_cast<double>(s)});
      b.x_next.push_back({static_cast<double>(s2)});
      b.r.push_back(mdp.R.at(s, 0));
      b.weight.push_back(static_cast<double>(support) / states * p);
      b.done.push_back(0);
    }
  }
  return b;
}

// ---- Schedules ------------------------------------------------------------------

double StepSchedule::peek() const {
  if (kind == Kind::constant) return c;
  return c / std::pow(1.0 + static_cast<double>(k), exponent);
}

double StepSchedule::next() {
  const double v = peek();
  k += 1;
  return v;
}

StepSchedule constant_schedule(double c) {
  require(c > 0.0, "constant_schedule: stepsize must be positive");
  StepSchedule s;
  s.kind = StepSchedule::Kind::constant;
  s.c = c;
  return s;
}

StepSchedule robbins_munro_schedule(double c, double exponent) {
  require(c > 0.0, "robbins_munro_schedule: stepsize must be positive");
  require(exponent > 0.5 && exponent <= 1.0,
          "robbins_munro_schedule: exponent must lie in (0.5, 1]");
  StepSchedule s;
  s.kind = StepSchedule::Kind::robbins_munro;
  s.c = c;
  s.exponent = exponent;
  return s;
}

// ---- MAP pair --------------------------------------------------------------------

MapPair::MapPair(const ValueModel& model, double lambda_, double gamma_)
    : phi(model.clone()),
      omega(model.clone()),
      phi0(model.params()),
      lambda(lambda_),
      gamma(gamma_),
      adam(model.param_count()) {
  require(lambda >= 0.0, "MapPair: prior weight must be nonnegative");
  require(gamma >= 0.0 && gamma < 1.0, "MapPair: discount must lie in [0,1)");
}

namespace {

// Shared MAP-loss gradient: batch-mean semi-gradient of
//   mean_i w_i ½ (b_i − V(x_i))² + λ‖θ − φ₀‖²
// with b_i = r_i + γ V_target(x'_i) (zeroed on done). Returns the loss.
double map_loss_grad(const ValueModel& value_net, const ValueModel& target_net,
                     const NonlinearBatch& batch, double lambda, const Vec& phi0,
                     double gamma, Vec& grad, const char* who) {
  const std::size_t b = batch.size();
  require(b > 0, std::string(who) + ": empty batch");
  Vec v_next;
  target_net.values(batch.x_next, v_next);
  Vec v;
  value_net.values(batch.x, v);
  Vec coef(b, 0.0);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double target =
        batch.r[i] + (batch.done[i] != 0 ? 0.0 : gamma * v_next[i]);
    const double resid = v[i] - target;
    loss += 0.5 * batch.weight[i] * resid * resid;
    coef[i] = batch.weight[i] * resid * inv_b;
  }
  loss *= inv_b;
  grad.assign(value_net.param_count(), 0.0);
  value_net.accumulate_value_grad(batch.x, coef, grad);
  if (lambda > 0.0) {
    const Vec& th = value_net.params();
    require(phi0.size() == th.size(), std::string(who) + ": phi0 size mismatch");
    double pen = 0.0;
    for (std::size_t j = 0; j < th.size(); ++j) {
      const double dvj = th[j] - phi0[j];
      pen += dvj * dvj;
      grad[j] += 2.0 * lambda * dvj;
    }
    loss += lambda * pen;
  }
  if (!finite(loss)) {
    throw numeric_error(std::string(who) + ": non-finite loss (|params|_inf=" +
                        std::to_string(norm_inf(value_net.params())) +
                        ", |grad|_inf=" + std::to_string(norm_inf(grad)) + ")");
  }
  return loss;
}

}  // namespace

double map_fast_step(MapPair& pair, const NonlinearBatch& batch) {
  Vec grad;
  const double loss = map_loss_grad(*pair.phi, *pair.omega, batch, pair.lambda,
                                    pair.phi0, pair.gamma, grad,
                                    "map_fast_step");
  const double alpha = pair.fast.next();
  projected_step(pair.phi->params(), grad, alpha, pair.mode, &pair.adam,
             pair.projection_radius, &pair.projection_hit, "map_fast_step");
  return loss;
}

void map_slow_step(MapPair& pair) {
  const double beta = pair.slow.next();
  Vec& om = pair.omega->params();
  const Vec& ph = pair.phi->params();
  require(om.size() == ph.size(), "map_slow_step: net size mismatch");
  for (std::size_t j = 0; j < om.size(); ++j)
    om[j] -= beta * (om[j] - ph[j]);
  if (norm2(om) > pair.projection_radius) {
    om = project_ball(om, pair.projection_radius);
    if (!pair.projection_hit) {
      pair.projection_hit = true;
      std::fprintf(stderr, "[nonlinear_pe] map_slow_step: projection radius %g bound\n",
                   pair.projection_radius);
    }
  }
}

double map_round(MapPair& pair, const NonlinearBatch& batch) {
  double loss = 0.0;
  for (std::size_t i = 0; i < pair.fast_steps_per_slow; ++i)
    loss = map_fast_step(pair, batch);
  map_slow_step(pair);
  return loss;
}

double direct_bbo_step(ValueModel& net, const NonlinearBatch& batch,
                       double lambda, const Vec& phi0, double gamma, double lr,
                       StepMode mode, AdamState* adam) {
  Vec grad;
  const double loss = map_loss_grad(net, net, batch, lambda, phi0, gamma, grad,
                                    "direct_bbo_step");
  projected_step(net.params(), grad, lr, mode, adam,
             std::numeric_limits<double>::infinity(), nullptr,
             "direct_bbo_step");
  return loss;
}

// ---- Gradient-BBO slow step ----------------------------------------------------

double fast_target_sensitivity(MapPair& pair, const NonlinearBatch& batch,
                               double fd_step) {
  require(pair.phi != nullptr && pair.omega != nullptr,
          "fast_target_sensitivity: uninitialized pair");
  require(pair.phi->param_count() == 1 && pair.omega->param_count() == 1,
          "fast_target_sensitivity: implicit differentiation of the fast "
          "solution requires scalar-parameter models");
  require(fd_step > 0.0, "fast_target_sensitivity: fd_step must be positive");
  Vec grad;
  const double phi_saved = pair.phi->params()[0];
  const double omega_saved = pair.omega->params()[0];
  const auto phi_grad = [&](double dphi, double domega) {
    pair.phi->params()[0] = phi_saved + dphi;
    pair.omega->params()[0] = omega_saved + domega;
    map_loss_grad(*pair.phi, *pair.omega, batch, pair.lambda, pair.phi0,
                  pair.gamma, grad, "fast_target_sensitivity");
    pair.phi->params()[0] = phi_saved;
    pair.omega->params()[0] = omega_saved;
    return grad[0];
  };
  const double lpp =
      (phi_grad(fd_step, 0.0) - phi_grad(-fd_step, 0.0)) / (2.0 * fd_step);
  const double lpw =
      (phi_grad(0.0, fd_step) - phi_grad(0.0, -fd_step)) / (2.0 * fd_step);
  if (std::abs(lpp) <= 1e-12) return 1.0;
  return -lpw / lpp;
}

void gradient_bbo_slow_step(MapPair& pair, const NonlinearBatch& batch) {
  const std::size_t b = batch.size();
  require(b > 0, "gradient_bbo_slow_step: empty batch");
  require(pair.mode != StepMode::adam,
          "gradient_bbo_slow_step: slow drift uses plain projected steps "
          "(sgd or sgd_normalized)");
  const double sens = fast_target_sensitivity(pair, batch);
  Vec v_om, v_ph;
  pair.omega->values(batch.x, v_om);
  pair.phi->values(batch.x, v_ph);
  Matrix g_om, g_ph;
  pair.omega->per_sample_grads(batch.x, g_om);
  pair.phi->per_sample_grads(batch.x, g_ph);
  double grad = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    grad += batch.weight[i] * (v_om[i] - v_ph[i]) *
            (g_om.at(i, 0) - g_ph.at(i, 0) * sens);
  grad *= 2.0 / static_cast<double>(b);
  require(finite(grad), "gradient_bbo_slow_step: non-finite gradient");
  const double beta = pair.slow.next();
  Vec gv(1, grad);
  projected_step(pair.omega->params(), gv, beta, pair.mode, nullptr,
             pair.projection_radius, &pair.projection_hit,
             "gradient_bbo_slow_step");
}

double gradient_bbo_round(MapPair& pair, const NonlinearBatch& batch) {
  double loss = 0.0;
  for (std::size_t i = 0; i < pair.fast_steps_per_slow; ++i)
    loss = map_fast_step(pair, batch);
  gradient_bbo_slow_step(pair, batch);
  return loss;
}

// ---- Nonlinear TDC ------------------------------------------------------------

void nonlinear_tdc_step(ValueModel& net, Vec& zeta, const NonlinearBatch& batch,
                        double gamma, double alpha_omega, double alpha_zeta,
                        StepMode mode, AdamState* adam_omega,
                        AdamState* adam_zeta) {
  const std::size_t b = batch.size();
  require(b > 0, "nonlinear_tdc_step: empty batch");
  const std::size_t p = net.param_count();
  require(zeta.size() == p, "nonlinear_tdc_step: zeta size mismatch");

  Vec v, v_next;
  net.values(batch.x, v);
  net.values(batch.x_next, v_next);
  Matrix g, g_next;
  net.per_sample_grads(batch.x, g);
  net.per_sample_grads(batch.x_next, g_next);

  Vec d_omega(p, 0.0), d_zeta(p, 0.0), resid_coef(b, 0.0);
  double mean_g2 = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double vn = batch.done[i] != 0 ? 0.0 : v_next[i];
    const double delta = batch.r[i] + gamma * vn - v[i];
    double gz = 0.0, gg = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      gz += g.at(i, j) * zeta[j];
      gg += g.at(i, j) * g.at(i, j);
    }
    const double w = batch.weight[i] * inv_b;
    resid_coef[i] = w * (delta - gz);
    mean_g2 += w * gg;
    for (std::size_t j = 0; j < p; ++j) {
      double corr = 0.0;
      if (batch.done[i] == 0) corr = gamma * gz * g_next.at(i, j);
      d_omega[j] += w * (delta * g.at(i, j) - corr);
      d_zeta[j] += w * (delta - gz) * g.at(i, j);
    }
  }

  // Curvature term −Σ_i w_i (δ_i − g_iᵀζ) H_i ζ via one central finite
  // difference of the coefficient-weighted gradient along ζ. Vanishes exactly
  // on affine nets (the gradient is parameter-independent there).
  const double zn = norm2(zeta);
  if (zn > 0.0) {
    Vec& theta = net.params();
    const Vec saved = theta;
    const double h = 1e-5 * std::max(1.0, norm2(theta));
    Vec gp(p, 0.0), gm(p, 0.0);
    axpy(theta, zeta, h / zn);
    net.accumulate_value_grad(batch.x, resid_coef, gp);
    theta = saved;
    axpy(theta, zeta, -h / zn);
    net.accumulate_value_grad(batch.x, resid_coef, gm);
    theta = saved;
    const double scale = zn / (2.0 * h);
    for (std::size_t j = 0; j < p; ++j)
      d_omega[j] -= scale * (gp[j] - gm[j]);
  }

  switch (mode) {
    case StepMode::sgd_normalized: {
      const double no = norm2(d_omega);
      if (no > 0.0) axpy(net.params(), d_omega, alpha_omega / no);
      if (mean_g2 > 0.0) axpy(zeta, d_zeta, alpha_zeta / mean_g2);
      return;
    }
    case StepMode::adam: {
      require(adam_omega != nullptr && adam_zeta != nullptr,
              "nonlinear_tdc_step: adam states missing");
      if (adam_omega->m.size() != p) *adam_omega = AdamState(p);
      if (adam_zeta->m.size() != p) *adam_zeta = AdamState(p);
      Vec neg(p, 0.0);
      for (std::size_t j = 0; j < p; ++j) neg[j] = -d_omega[j];
      adam_step(net.params(), neg, *adam_omega, alpha_omega);
      for (std::size_t j = 0; j < p; ++j) neg[j] = -d_zeta[j];
      adam_step(zeta, neg, *adam_zeta, alpha_zeta);
      return;
    }
    case StepMode::sgd:
      axpy(net.params(), d_omega, alpha_omega);
      axpy(zeta, d_zeta, alpha_zeta);
      return;
  }
}

// ---- Evaluation ------------------------------------------------------------------

double evaluate_mse(const Vec& predictions, const Vec& truth,
                    const Vec& weights) {
  require(predictions.size() == truth.size() && truth.size() == weights.size(),
          "evaluate_mse: size mismatch");
  require(!predictions.empty(), "evaluate_mse: no probes");
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - truth[i];
    acc += weights[i] * e * e;
    wsum += weights[i];
  }
  require(wsum > 0.0, "evaluate_mse: weights sum to zero");
  return acc / wsum;
}

double evaluate_mse(const ValueModel& model, const std::vector<Vec>& probes,
                    const Vec& truth, const Vec& weights) {
  Vec pred;
  model.values(probes, pred);
  return evaluate_mse(pred, truth, weights);
}

}  // namespace bbo
