#pragma once

// Nonlinear policy-evaluation engines over generic differentiable value
// models: two-timescale gradient BBO (fast Bellman-model fit, slow step on
// the fixed-point residual or a plain drift toward the fast net),
// single-network direct BBO / TD(0), and curvature-corrected nonlinear TDC
// with auxiliary linear weights on the parameter-gradient features.
//
// The engines are written against ValueModel so an MLP and the scalar-spiral
// counterexample parametrization run through identical update code.

#include <cstdint>
#include <memory>
#include <vector>

#include "bbo/envs.hpp"
#include "bbo/mlp.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

// ---- Differentiable scalar-valued model -----------------------------------

class ValueModel {
 public:
  virtual ~ValueModel() = default;

  virtual std::size_t param_count() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual Vec& params() = 0;
  virtual const Vec& params() const = 0;

  // out[i] = V(x[i]); out is resized.
  virtual void values(const std::vector<Vec>& x, Vec& out) const = 0;

  // grad += sum_i coef[i] * dV(x[i]) / dparams. grad must be param-sized.
  virtual void accumulate_value_grad(const std::vector<Vec>& x,
                                     const Vec& coef, Vec& grad) const = 0;

  // Row i of `out` (resized to |x| × param_count) is dV(x[i]) / dparams.
  virtual void per_sample_grads(const std::vector<Vec>& x, Matrix& out) const = 0;

  virtual std::unique_ptr<ValueModel> clone() const = 0;
};

// Scalar-output MLP. Batch entry points ride the GEMM-backed kernels.
class MlpValueModel final : public ValueModel {
 public:
  explicit MlpValueModel(MlpApproximator net);

  std::size_t param_count() const override { return net_.params.size(); }
  std::size_t input_dim() const override { return net_.input_dim(); }
  Vec& params() override { return net_.params; }
  const Vec& params() const override { return net_.params; }
  void values(const std::vector<Vec>& x, Vec& out) const override;
  void accumulate_value_grad(const std::vector<Vec>& x, const Vec& coef,
                             Vec& grad) const override;
  void per_sample_grads(const std::vector<Vec>& x, Matrix& out) const override;
  std::unique_ptr<ValueModel> clone() const override;

  const MlpApproximator& net() const { return net_; }

 private:
  MlpApproximator net_;
  mutable MlpWorkspace ws_;
  mutable Matrix xbuf_;
};

// Bias-free linear head V(x) = ψᵀx, for exact ridge/least-squares
// cross-checks against the closed forms.
class LinearValueModel final : public ValueModel {
 public:
  explicit LinearValueModel(std::size_t dim) : psi_(dim, 0.0) {}
  explicit LinearValueModel(Vec psi) : psi_(std::move(psi)) {}

  std::size_t param_count() const override { return psi_.size(); }
  std::size_t input_dim() const override { return psi_.size(); }
  Vec& params() override { return psi_; }
  const Vec& params() const override { return psi_; }
  void values(const std::vector<Vec>& x, Vec& out) const override;
  void accumulate_value_grad(const std::vector<Vec>& x, const Vec& coef,
                             Vec& grad) const override;
  void per_sample_grads(const std::vector<Vec>& x, Matrix& out) const override;
  std::unique_ptr<ValueModel> clone() const override;

 private:
  Vec psi_;
};

// The three-state spiral family V̂(ω) (scalar parameter). Inputs are
// one-element vectors holding the state index 0, 1 or 2.
class TriangleValueModel final : public ValueModel {
 public:
  explicit TriangleValueModel(double omega0 = 0.0) : omega_(1, omega0) {}

  std::size_t param_count() const override { return 1; }
  std::size_t input_dim() const override { return 1; }
  Vec& params() override { return omega_; }
  const Vec& params() const override { return omega_; }
  void values(const std::vector<Vec>& x, Vec& out) const override;
  void accumulate_value_grad(const std::vector<Vec>& x, const Vec& coef,
                             Vec& grad) const override;
  void per_sample_grads(const std::vector<Vec>& x, Matrix& out) const override;
  std::unique_ptr<ValueModel> clone() const override;

 private:
  Vec omega_;
};

// ---- Batches ----------------------------------------------------------------

// Inputs already mapped to model space: x is the value-model input at time t,
// x_next at t+1 (for action-value targets the next action is folded into
// x_next by the caller). done marks bootstrap truncation.
struct NonlinearBatch {
  std::vector<Vec> x;
  std::vector<Vec> x_next;
  Vec r;
  Vec weight;
  std::vector<std::uint8_t> done;

  std::size_t size() const { return x.size(); }
};

// State-value batch from dataset rows at the given indices (x = observation).
NonlinearBatch make_pe_batch(const Dataset& ds,
                             const std::vector<std::size_t>& idx);

// Uniform minibatch index draw with replacement.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t batch,
                                        Rng& rng);

// All six spiral-MDP transitions with exact probability weights, so a
// batch-mean update equals the expected (population) update.
NonlinearBatch triangle_expected_batch();

// ---- Schedules & step modes ---------------------------------------------------

// Stepsize sequence: constant c, or Robbins-Munro c / (1 + k)^exponent with
// exponent in (0.5, 1].
struct StepSchedule {
  enum class Kind : std::uint8_t { constant = 0, robbins_munro = 1 };
  Kind kind = Kind::constant;
  double c = 1e-2;
  double exponent = 0.0;
  std::size_t k = 0;

  double peek() const;
  double next();  // value at current k, then k += 1
};

StepSchedule constant_schedule(double c);
StepSchedule robbins_munro_schedule(double c, double exponent);

enum class StepMode : std::uint8_t { sgd = 0, sgd_normalized = 1, adam = 2 };

// One descent step along grad (raw, L2-normalized, or Adam), then projection
// onto the ball of the given radius. A binding projection is reported to
// stderr once per hit_flag; pass nullptr to stay silent. adam may be null for
// the sgd modes.
void projected_step(Vec& params, const Vec& grad, double lr, StepMode mode,
                    AdamState* adam, double radius, bool* hit_flag,
                    const char* who);

// ---- Two-timescale MAP pair ---------------------------------------------------

// Fast net fits the Bellman backup of the slow net under a Gaussian prior
// anchored at phi0 (weight lambda = 1/sigma0^2); the slow net drifts toward
// the fast net. Projection keeps parameters in a ball of the given radius
// (default effectively inactive; a binding projection is logged once).
struct MapPair {
  std::unique_ptr<ValueModel> phi;    // fast: Bellman-model estimate
  std::unique_ptr<ValueModel> omega;  // slow: value estimate
  Vec phi0;
  double lambda = 0.0;
  double gamma = 0.99;
  StepSchedule fast = constant_schedule(1e-3);
  StepSchedule slow = constant_schedule(1e-4);
  std::size_t fast_steps_per_slow = 1;
  double projection_radius = 1e6;
  StepMode mode = StepMode::adam;
  AdamState adam;
  bool projection_hit = false;

  MapPair() = default;
  // Clones `model` into both nets and anchors the prior at its parameters.
  MapPair(const ValueModel& model, double lambda_, double gamma_);
};

// One projected step on the fast net against the batch-mean MAP loss
//   mean_i w_i ½ (r_i + γ V_ω(x'_i) − V_φ(x_i))² + λ‖φ − φ₀‖²
// with targets from the frozen slow net. Returns the loss; throws
// numeric_error with diagnostics if it is not finite.
double map_fast_step(MapPair& pair, const NonlinearBatch& batch);

// ω ← P(ω − β_k (ω − φ)), exactly affine inside the projection ball.
void map_slow_step(MapPair& pair);

// Runs fast_steps_per_slow fast steps then one slow step. Returns the last
// fast loss.
double map_round(MapPair& pair, const NonlinearBatch& batch);

// d(fast solution)/d(slow parameter) for scalar-parameter pairs, by implicit
// differentiation of the fast stationarity condition at the current iterates:
//   dφ*/dω = −L_φω / L_φφ,
// both second derivatives taken of the fast MAP loss by central finite
// differences of its analytic gradient. Falls back to 1 when the fast
// curvature is numerically zero. Throws unless both nets have one parameter.
double fast_target_sensitivity(MapPair& pair, const NonlinearBatch& batch,
                               double fd_step = 1e-4);

// Slow step descending the mean-squared gap between slow-net and fast-net
// values,
//   mean_i w_i (V_ω(x_i) − V_φ(x_i))²,
// with the fast net's first-order response to ω included through
// fast_target_sensitivity — the full-gradient slow update, in contrast to
// the plain drift of map_slow_step (which on the spiral counterexample
// tracks a divergent branch). Scalar-parameter models only; modes sgd and
// sgd_normalized.
void gradient_bbo_slow_step(MapPair& pair, const NonlinearBatch& batch);

// Runs fast_steps_per_slow fast steps then one gradient_bbo_slow_step.
// Returns the last fast loss.
double gradient_bbo_round(MapPair& pair, const NonlinearBatch& batch);

// Single-network semi-gradient step on the MAP loss, targets computed from
// the same network frozen within the step. lambda = 0 is exactly nonlinear
// TD(0). Returns the loss.
double direct_bbo_step(ValueModel& net, const NonlinearBatch& batch,
                       double lambda, const Vec& phi0, double gamma, double lr,
                       StepMode mode = StepMode::sgd,
                       AdamState* adam = nullptr);

// ---- Nonlinear TDC --------------------------------------------------------------

// Auxiliary linear weights zeta live on the feature map dV/dparams. Updates
// (batch means, weights applied):
//   ω  += α_ω mean_i w_i (δ_i g_i − γ (g_iᵀ ζ) g'_i − (δ_i − g_iᵀ ζ) H_i ζ)
//   ζ  += α_ζ mean_i w_i (δ_i − g_iᵀ ζ) g_i
// with g = dV(x)/dω, g' = dV(x')/dω, δ = r + γV(x') − V(x), and H_i the value
// Hessian at x_i. The curvature (Hessian-vector) term is evaluated with one
// central finite difference of the batch-accumulated gradient along ζ; on a
// purely affine net it vanishes identically and the update is the linear
// tdc_step on features [x; 1]. Dropping the term makes the method ascend the
// value error on curved models such as the spiral counterexample.
//
// sgd_normalized scales each timescale by its natural normalizer: the ω step
// is L2-normalized to unit length, the ζ step is divided by the batch mean
// squared feature norm (normalized-LMS), so α_ζ = 1 lands ζ on its per-batch
// least-squares value. adam mode uses the optional optimizer states.
void nonlinear_tdc_step(ValueModel& net, Vec& zeta, const NonlinearBatch& batch,
                        double gamma, double alpha_omega, double alpha_zeta,
                        StepMode mode = StepMode::sgd,
                        AdamState* adam_omega = nullptr,
                        AdamState* adam_zeta = nullptr);

// ---- Evaluation ----------------------------------------------------------------

// Weighted mean squared prediction error: Σ w_i (p_i − t_i)² / Σ w_i.
double evaluate_mse(const Vec& predictions, const Vec& truth,
                    const Vec& weights);
double evaluate_mse(const ValueModel& model, const std::vector<Vec>& probes,
                    const Vec& truth, const Vec& weights);

}  // namespace bbo
