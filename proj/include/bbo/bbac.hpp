#pragma once

// Randomized-prior Bayesian actor-critic for continuous control: an ensemble
// of critics with lagged target networks and frozen additive prior networks,
// one exploratory actor per ensemble member selected by per-episode Thompson
// sampling, an entropy-regularized behavioural policy trained against the
// min of two sampled critics, uniform replay, and the target-aliased
// ablation in which the lagged network is pinned to the critic.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bbo/envs.hpp"
#include "bbo/mlp.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

// Tanh-squashed diagonal Gaussian policy. The network maps an observation to
// 2·act_dim head outputs: means first, then raw log-stds, which are clamped
// to [kLogStdMin, kLogStdMax] before use. Sampled and mean actions live in
// the symmetric box [−act_bound, act_bound]^act_dim; with squash=false the
// draw is clipped into the box instead of squashed (evaluation-only escape
// hatch — the reparametrized updates require squashing).
struct GaussianPolicy {
  MlpApproximator net;
  double act_bound = 1.0;
  bool squash = true;

  static constexpr double kLogStdMin = -20.0;
  static constexpr double kLogStdMax = 2.0;

  GaussianPolicy() = default;
  GaussianPolicy(std::size_t obs_dim, std::size_t act_dim,
                 const std::vector<std::size_t>& hidden, double bound,
                 Rng& rng);

  std::size_t obs_dim() const { return net.input_dim(); }
  std::size_t act_dim() const { return net.output_dim() / 2; }
};

enum class ActMode : std::uint8_t { sample, mean };

// Mean and clamped log-std heads at one observation.
void policy_head(const GaussianPolicy& policy, const Vec& obs, Vec& mu,
                 Vec& log_std);

// Draw (sample) or deterministic (mean) action, always inside the box.
Vec act(const GaussianPolicy& policy, const Vec& obs, ActMode mode, Rng& rng);

// Uniform-replay ring buffer with FIFO eviction.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return ring_.size(); }
  std::size_t capacity() const { return capacity_; }
  // i = 0 is the oldest live transition.
  const Transition& at(std::size_t i) const;
  // Uniform with replacement over the live contents.
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

 private:
  std::vector<Transition> ring_;
  std::size_t capacity_ = 0;
  std::size_t next_ = 0;  // slot the next push overwrites once full
};

struct BbacConfig {
  std::size_t ensemble_size = 8;               // L
  std::vector<std::size_t> hidden = {256, 256};
  double gamma = 0.99;
  double critic_lr = 3e-4;        // alpha_k, Adam
  double target_coef = 5e-3;      // beta_k, Polyak pull toward the critic
  double actor_lr = 3e-4;         // zeta_k, Adam (exploratory actors)
  double behavioural_lr = 3e-4;   // Adam, behavioural policy
  double entropy_weight = 0.2;    // behavioural objective only
  double model_noise_var = 1.0;   // sigma^2 in the critic loss
  double prior_scale = 100.0;     // sigma_prior on the frozen prior networks
  double ridge_weight = 3e-5;     // lambda, decay of the critic toward zero
  std::size_t batch_size = 256;
  std::size_t replay_capacity = 1000000;
  std::size_t env_steps_per_update = 1;  // updates run in blocks of this size
  std::size_t eval_every = 1000;         // env steps between evaluations
  std::size_t eval_episodes = 10;
  double projection_radius = 1e6;
  bool alias_targets = false;  // ablation: omega_l pinned to psi_l
};

// Single-model baseline: one member, no prior network, no ridge anchor and
// an entropy-free behavioural policy — exploration by Gaussian noise only.
BbacConfig naive_config();
// Target-aliased ablation, otherwise identical hyperparameters.
BbacConfig bac_ablation_config();

// One ensemble member: critic psi_l, lagged target omega_l, frozen prior
// network p_l (the member's critic value is net(s,a) + prior_scale·p_l(s,a))
// and the exploratory actor theta_l.
struct BbacMember {
  MlpApproximator critic;
  MlpApproximator target;
  MlpApproximator prior;
  GaussianPolicy actor;
  AdamState critic_adam;
  AdamState actor_adam;
};

struct BbacScratch {  // reusable workspaces/buffers, never serialized
  MlpWorkspace policy, critic, target, prior, prior_next, critic2, prior2;
  Matrix s, a, s2, a2, sa, s2a2, dq, dq2, din, upsilon;
  Vec q, q2, y, grad, neg;
};

class BbacAgent {
 public:
  BbacAgent(const BbacConfig& config, std::size_t obs_dim, std::size_t act_dim,
            double act_bound, Rng& rng);

  BbacConfig cfg;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  double act_bound = 1.0;
  std::vector<BbacMember> members;
  GaussianPolicy behavioural;
  AdamState behavioural_adam;
  ReplayBuffer buffer;
  std::size_t active_member = 0;
  bool projection_hit = false;
  BbacScratch scratch;

  // Member value net(s,a) + prior_scale·p_l(s,a); use_target picks omega_l.
  double member_q(std::size_t l, const Vec& obs, const Vec& action,
                  bool use_target) const;
};

// ---- Reparametrized policy objective --------------------------------------

// Batched critic evaluation: fill q[i] = Q(obs_i, act_i) and the action
// gradient rows dq_da[i] = dQ/da at (obs_i, act_i).
using CriticBatchFn = std::function<void(const Matrix& obs, const Matrix& act,
                                         Vec& q, Matrix& dq_da)>;

struct PolicyObjective {
  double value = 0.0;  // mean_i [ Q_i − entropy_weight · log pi(a_i|s_i) ]
  Vec grad;            // d value / d policy params (ascent direction)
};

// Objective and exact gradient of the squashed reparametrized policy under a
// frozen noise matrix upsilon (rows match obs): a_i = bound·tanh(mu + sigma∘u).
// The log-density includes the tanh change-of-variables term. Requires
// policy.squash; entropy_weight = 0 gives the plain critic-ascent objective.
PolicyObjective policy_objective_gradient(const GaussianPolicy& policy,
                                          const Matrix& obs,
                                          const Matrix& upsilon,
                                          const CriticBatchFn& critic,
                                          double entropy_weight);

// ---- Training updates ------------------------------------------------------

// One pass per iteration over every member: sample a minibatch, draw next
// actions from the member's own actor, descend the critic on the squared
// Bellman residual (scaled by 1/(2·sigma^2)) plus the ridge decay, pull the
// target toward the critic (or copy it when aliased), then ascend the
// exploratory actor on the member critic. Throws numeric_error naming the
// member on a non-finite loss; requires a nonempty buffer.
void update_posterior(BbacAgent& agent, std::size_t iterations, Rng& rng);

// Ascend the behavioural policy on min of two uniformly sampled member
// critics minus entropy_weight·log pi, one minibatch per iteration.
void update_behavioural_policy(BbacAgent& agent, std::size_t iterations,
                               Rng& rng);

// ---- Episode loop -----------------------------------------------------------

struct MetricRow {
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
};
using MetricSink = std::function<void(const MetricRow&)>;

// Interaction loop: per-episode Thompson draw of the exploratory actor, one
// transition appended per env step, update blocks of env_steps_per_update
// posterior + behavioural iterations once the buffer holds one batch, and
// mean-action evaluation of the behavioural policy every eval_every steps.
// Emits metrics: control.active_member (episode starts), control.train_return
// (episode ends), control.eval_return and rp.ensemble_var — the across-member
// critic variance probed at visited states — every eval_every steps.
// Deterministic in rng.
void run_training(BbacAgent& agent, ContinuousEnv& env, std::size_t total_steps,
                  Rng& rng, const MetricSink& sink);

// Mean return of n mean-action episodes (episode cap = env horizon).
double evaluate_policy(const GaussianPolicy& policy, ContinuousEnv& env,
                       std::size_t n_episodes, Rng& rng);

// Fixed probe set for disagreement tracking: rows are [obs, action] with obs
// uniform over [−1,1]^obs_dim and actions uniform over the box.
std::vector<Vec> disagreement_probes(std::size_t obs_dim, std::size_t act_dim,
                                     double act_bound, std::size_t count,
                                     Rng& rng);

// Mean over probes of the across-member variance of the critic values.
double ensemble_disagreement(const BbacAgent& agent,
                             const std::vector<Vec>& probes);

// ---- Diagnostics & persistence ----------------------------------------------

struct GridSpec {
  double x_lo = -1.0, x_hi = 1.0;
  double y_lo = -1.0, y_hi = 1.0;
  std::size_t nx = 32, ny = 32;
};

// Bucketed counts of the buffered states (2-D observations only; out-of-range
// points land in the edge bins so totals always equal the buffer size).
Matrix visitation_histogram(const ReplayBuffer& buffer, const GridSpec& grid);

// All parameter vectors (members + behavioural policy) in one flat binary
// file; load requires an agent built with the same configuration.
void save_agent(const BbacAgent& agent, const std::string& path);
void load_agent(BbacAgent& agent, const std::string& path);

}  // namespace bbo
