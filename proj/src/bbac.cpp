#include "bbo/bbac.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <utility>

#include "bbo/nonlinear_pe.hpp"  // projected_step

namespace bbo {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // ½·log(2π)

void require(bool ok, const char* msg) {
  if (!ok) throw numeric_error(msg);
}

// log(1 − tanh²(x)) evaluated without catastrophic underflow at large |x|.
double log1m_tanh2(double x) {
  const double ax = std::abs(x);
  return 2.0 * (std::log(2.0) - ax - std::log1p(std::exp(-2.0 * ax)));
}

double clamp_log_std(double raw) {
  return std::min(GaussianPolicy::kLogStdMax,
                  std::max(GaussianPolicy::kLogStdMin, raw));
}

void concat_cols(const Matrix& a, const Matrix& b, Matrix& out) {
  if (out.rows != a.rows || out.cols != a.cols + b.cols)
    out = Matrix(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::memcpy(&out.at(i, 0), a.data.data() + i * a.cols,
                a.cols * sizeof(double));
    std::memcpy(&out.at(i, a.cols), b.data.data() + i * b.cols,
                b.cols * sizeof(double));
  }
}

void validate_config(const BbacConfig& cfg) {
  require(cfg.ensemble_size >= 1, "bbac config: ensemble_size must be >= 1");
  require(cfg.batch_size >= 1, "bbac config: batch_size must be >= 1");
  require(cfg.replay_capacity >= cfg.batch_size,
          "bbac config: replay_capacity must hold at least one batch");
  require(cfg.gamma >= 0.0 && cfg.gamma < 1.0,
          "bbac config: gamma must lie in [0, 1)");
  require(cfg.model_noise_var > 0.0,
          "bbac config: model_noise_var must be positive");
  require(cfg.critic_lr >= 0.0 && cfg.actor_lr >= 0.0 &&
              cfg.behavioural_lr >= 0.0,
          "bbac config: learning rates must be non-negative");
  require(cfg.target_coef >= 0.0 && cfg.target_coef <= 1.0,
          "bbac config: target_coef must lie in [0, 1]");
  require(cfg.entropy_weight >= 0.0,
          "bbac config: entropy_weight must be non-negative");
  require(cfg.prior_scale >= 0.0,
          "bbac config: prior_scale must be non-negative");
  require(cfg.ridge_weight >= 0.0,
          "bbac config: ridge_weight must be non-negative");
  require(cfg.env_steps_per_update >= 1,
          "bbac config: env_steps_per_update must be >= 1");
  require(cfg.eval_every >= 1, "bbac config: eval_every must be >= 1");
  require(cfg.eval_episodes >= 1, "bbac config: eval_episodes must be >= 1");
  require(cfg.projection_radius > 0.0,
          "bbac config: projection_radius must be positive");
}

// Member critic value and action gradient at a batch of (obs, act) rows.
// q[i] = net(sa_i) + prior_scale·p(sa_i); dq_da rows are d q_i / d a_i.
void member_critic_batch(const BbacAgent& agent, const BbacMember& mem,
                         const Matrix& obs, const Matrix& act, Matrix& sa,
                         MlpWorkspace& ws_c, MlpWorkspace& ws_p, Matrix& din,
                         Vec& q, Matrix& dq_da) {
  const std::size_t b = obs.rows, d = act.cols;
  concat_cols(obs, act, sa);
  const Matrix& out_c = mlp_batch_forward(mem.critic, sa, ws_c);
  if (q.size() != b) q.assign(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) q[i] = out_c.at(i, 0);

  Matrix ones(b, 1, 1.0);
  mlp_batch_input_grad(mem.critic, ws_c, ones, din);
  if (dq_da.rows != b || dq_da.cols != d) dq_da = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) dq_da.at(i, k) = din.at(i, obs.cols + k);

  if (agent.cfg.prior_scale != 0.0) {
    const Matrix& out_p = mlp_batch_forward(mem.prior, sa, ws_p);
    for (std::size_t i = 0; i < b; ++i)
      q[i] += agent.cfg.prior_scale * out_p.at(i, 0);
    mlp_batch_input_grad(mem.prior, ws_p, ones, din);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < d; ++k)
        dq_da.at(i, k) += agent.cfg.prior_scale * din.at(i, obs.cols + k);
  }
}

// Batched squashed draw from a policy: a = bound·tanh(mu + sigma∘upsilon).
void sample_actions_batch(const GaussianPolicy& pol, const Matrix& obs,
                          MlpWorkspace& ws, Rng& rng, Matrix& actions) {
  const std::size_t b = obs.rows, d = pol.act_dim();
  const Matrix& out = mlp_batch_forward(pol.net, obs, ws);
  if (actions.rows != b || actions.cols != d) actions = Matrix(b, d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double sigma = std::exp(clamp_log_std(out.at(i, d + k)));
      const double pre = out.at(i, k) + sigma * rng.normal();
      actions.at(i, k) = pol.squash
                             ? pol.act_bound * std::tanh(pre)
                             : std::min(pol.act_bound,
                                        std::max(-pol.act_bound, pre));
    }
}

void fill_minibatch(const ReplayBuffer& buffer,
                    const std::vector<std::size_t>& idx, std::size_t obs_dim,
                    std::size_t act_dim, Matrix& s, Matrix& a, Matrix& s2,
                    Vec& r, std::vector<char>& done) {
  const std::size_t b = idx.size();
  if (s.rows != b || s.cols != obs_dim) s = Matrix(b, obs_dim);
  if (a.rows != b || a.cols != act_dim) a = Matrix(b, act_dim);
  if (s2.rows != b || s2.cols != obs_dim) s2 = Matrix(b, obs_dim);
  r.assign(b, 0.0);
  done.assign(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const Transition& t = buffer.at(idx[i]);
    require(t.s.size() == obs_dim && t.s_next.size() == obs_dim &&
                t.a.size() == act_dim,
            "bbac minibatch: transition dimensions do not match the agent");
    std::memcpy(&s.at(i, 0), t.s.data(), obs_dim * sizeof(double));
    std::memcpy(&a.at(i, 0), t.a.data(), act_dim * sizeof(double));
    std::memcpy(&s2.at(i, 0), t.s_next.data(), obs_dim * sizeof(double));
    r[i] = t.r;
    done[i] = t.done ? 1 : 0;
  }
}

}  // namespace

// ---- Gaussian policy --------------------------------------------------------

GaussianPolicy::GaussianPolicy(std::size_t obs_dim, std::size_t act_dim,
                               const std::vector<std::size_t>& hidden,
                               double bound, Rng& rng) {
  require(obs_dim >= 1 && act_dim >= 1,
          "gaussian policy: dimensions must be positive");
  require(bound > 0.0, "gaussian policy: action bound must be positive");
  std::vector<std::size_t> sizes;
  sizes.push_back(obs_dim);
  for (const std::size_t h : hidden) sizes.push_back(h);
  sizes.push_back(2 * act_dim);
  net = MlpApproximator(sizes, Activation::relu);
  net.params = glorot_init(sizes, rng);
  act_bound = bound;
}

void policy_head(const GaussianPolicy& policy, const Vec& obs, Vec& mu,
                 Vec& log_std) {
  const Vec out = forward(policy.net, obs);
  const std::size_t d = policy.act_dim();
  mu.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(d));
  log_std.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) log_std[k] = clamp_log_std(out[d + k]);
}

Vec act(const GaussianPolicy& policy, const Vec& obs, ActMode mode, Rng& rng) {
  Vec mu, ls;
  policy_head(policy, obs, mu, ls);
  const std::size_t d = policy.act_dim();
  Vec a(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double pre =
        mode == ActMode::mean ? mu[k] : mu[k] + std::exp(ls[k]) * rng.normal();
    a[k] = policy.squash
               ? policy.act_bound * std::tanh(pre)
               : std::min(policy.act_bound, std::max(-policy.act_bound, pre));
  }
  return a;
}

// ---- Replay buffer ----------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity >= 1, "replay buffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(t));
  } else {
    ring_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  require(i < ring_.size(), "replay buffer: index out of range");
  if (ring_.size() < capacity_) return ring_[i];
  return ring_[(next_ + i) % capacity_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count,
                                                      Rng& rng) const {
  require(!ring_.empty(), "replay buffer: cannot sample while empty");
  std::vector<std::size_t> idx(count);
  for (std::size_t& v : idx) v = rng.uniform_int(ring_.size());
  return idx;
}

// ---- Configurations ---------------------------------------------------------

BbacConfig naive_config() {
  BbacConfig cfg;
  cfg.ensemble_size = 1;
  cfg.prior_scale = 0.0;
  cfg.ridge_weight = 0.0;
  cfg.entropy_weight = 0.0;
  return cfg;
}

BbacConfig bac_ablation_config() {
  BbacConfig cfg;
  cfg.alias_targets = true;
  return cfg;
}

// ---- Agent ------------------------------------------------------------------

BbacAgent::BbacAgent(const BbacConfig& config, std::size_t obs_dim_,
                     std::size_t act_dim_, double act_bound_, Rng& rng)
    : cfg(config),
      obs_dim(obs_dim_),
      act_dim(act_dim_),
      act_bound(act_bound_),
      buffer(config.replay_capacity) {
  validate_config(cfg);
  require(obs_dim >= 1 && act_dim >= 1,
          "bbac agent: dimensions must be positive");
  require(act_bound > 0.0, "bbac agent: action bound must be positive");

  std::vector<std::size_t> critic_sizes;
  critic_sizes.push_back(obs_dim + act_dim);
  for (const std::size_t h : cfg.hidden) critic_sizes.push_back(h);
  critic_sizes.push_back(1);

  members.reserve(cfg.ensemble_size);
  for (std::size_t l = 0; l < cfg.ensemble_size; ++l) {
    BbacMember mem;
    mem.critic = MlpApproximator(critic_sizes, Activation::relu);
    mem.critic.params = glorot_init(critic_sizes, rng);
    mem.target = mem.critic;
    mem.prior = MlpApproximator(critic_sizes, Activation::relu);
    mem.prior.params = glorot_init(critic_sizes, rng);
    mem.actor = GaussianPolicy(obs_dim, act_dim, cfg.hidden, act_bound, rng);
    members.push_back(std::move(mem));
  }
  behavioural = GaussianPolicy(obs_dim, act_dim, cfg.hidden, act_bound, rng);
}

double BbacAgent::member_q(std::size_t l, const Vec& obs, const Vec& action,
                           bool use_target) const {
  require(l < members.size(), "member_q: member index out of range");
  Vec sa(obs.size() + action.size());
  std::copy(obs.begin(), obs.end(), sa.begin());
  std::copy(action.begin(), action.end(),
            sa.begin() + static_cast<std::ptrdiff_t>(obs.size()));
  const BbacMember& mem = members[l];
  double q = forward(use_target ? mem.target : mem.critic, sa)[0];
  if (cfg.prior_scale != 0.0)
    q += cfg.prior_scale * forward(mem.prior, sa)[0];
  return q;
}

// ---- Reparametrized policy objective ---------------------------------------

PolicyObjective policy_objective_gradient(const GaussianPolicy& policy,
                                          const Matrix& obs,
                                          const Matrix& upsilon,
                                          const CriticBatchFn& critic,
                                          double entropy_weight) {
  require(policy.squash,
          "policy objective: requires a tanh-squashed policy");
  const std::size_t b = obs.rows, d = policy.act_dim();
  require(b >= 1, "policy objective: empty batch");
  require(obs.cols == policy.obs_dim(),
          "policy objective: observation dimension mismatch");
  require(upsilon.rows == b && upsilon.cols == d,
          "policy objective: upsilon shape mismatch");
  require(entropy_weight >= 0.0,
          "policy objective: entropy weight must be non-negative");

  MlpWorkspace ws;
  const Matrix& out = mlp_batch_forward(policy.net, obs, ws);

  Matrix actions(b, d), pre(b, d), sigma(b, d);
  std::vector<char> gate(b * d, 0);
  const double c = policy.act_bound;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double raw = out.at(i, d + k);
      const double ls = clamp_log_std(raw);
      gate[i * d + k] =
          (raw > GaussianPolicy::kLogStdMin && raw < GaussianPolicy::kLogStdMax)
              ? 1
              : 0;
      sigma.at(i, k) = std::exp(ls);
      pre.at(i, k) = out.at(i, k) + sigma.at(i, k) * upsilon.at(i, k);
      actions.at(i, k) = c * std::tanh(pre.at(i, k));
    }

  Vec q;
  Matrix dq_da;
  critic(obs, actions, q, dq_da);
  require(q.size() == b, "policy objective: critic value size mismatch");
  require(dq_da.rows == b && dq_da.cols == d,
          "policy objective: critic gradient shape mismatch");

  PolicyObjective result;
  Matrix dout(b, 2 * d);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    double logpi = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double ls = std::log(sigma.at(i, k));
      const double u = upsilon.at(i, k);
      logpi += -kHalfLog2Pi - ls - 0.5 * u * u - std::log(c) -
               log1m_tanh2(pre.at(i, k));
      const double t = std::tanh(pre.at(i, k));
      const double dpre =
          (dq_da.at(i, k) * c * (1.0 - t * t) - entropy_weight * 2.0 * t) *
          inv_b;
      dout.at(i, k) = dpre;
      dout.at(i, d + k) =
          gate[i * d + k] != 0
              ? dpre * sigma.at(i, k) * u + entropy_weight * inv_b
              : 0.0;
    }
    result.value += (q[i] - entropy_weight * logpi) * inv_b;
  }

  result.grad.assign(policy.net.params.size(), 0.0);
  mlp_batch_backward(policy.net, ws, dout, result.grad);
  require(std::isfinite(result.value), "policy objective: non-finite value");
  for (const double g : result.grad)
    require(std::isfinite(g), "policy objective: non-finite gradient");
  return result;
}

// ---- Training updates -------------------------------------------------------

void update_posterior(BbacAgent& agent, std::size_t iterations, Rng& rng) {
  require(agent.buffer.size() > 0, "update_posterior: empty replay buffer");
  const BbacConfig& cfg = agent.cfg;
  BbacScratch& sc = agent.scratch;
  const double inv_var = 1.0 / cfg.model_noise_var;
  std::vector<char> done;
  Vec resid, y;

  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t l = 0; l < agent.members.size(); ++l) {
      BbacMember& mem = agent.members[l];
      try {
        const auto idx = agent.buffer.sample_indices(cfg.batch_size, rng);
        fill_minibatch(agent.buffer, idx, agent.obs_dim, agent.act_dim, sc.s,
                       sc.a, sc.s2, sc.q, done);
        const std::size_t b = idx.size();

        // Bootstrap targets y = r + γ(1−done)·Q_ω(s', a'), a' ~ π_θ_l(·|s').
        sample_actions_batch(mem.actor, sc.s2, sc.policy, rng, sc.a2);
        concat_cols(sc.s2, sc.a2, sc.s2a2);
        const Matrix& qt = mlp_batch_forward(mem.target, sc.s2a2, sc.target);
        y.assign(b, 0.0);
        for (std::size_t i = 0; i < b; ++i) y[i] = qt.at(i, 0);
        if (cfg.prior_scale != 0.0) {
          const Matrix& qp =
              mlp_batch_forward(mem.prior, sc.s2a2, sc.prior_next);
          for (std::size_t i = 0; i < b; ++i)
            y[i] += cfg.prior_scale * qp.at(i, 0);
        }
        for (std::size_t i = 0; i < b; ++i)
          y[i] = sc.q[i] + (done[i] != 0 ? 0.0 : cfg.gamma * y[i]);

        // Critic values at the stored (s, a).
        concat_cols(sc.s, sc.a, sc.sa);
        const Matrix& qc = mlp_batch_forward(mem.critic, sc.sa, sc.critic);
        resid.assign(b, 0.0);
        for (std::size_t i = 0; i < b; ++i) resid[i] = y[i] - qc.at(i, 0);
        if (cfg.prior_scale != 0.0) {
          const Matrix& qp = mlp_batch_forward(mem.prior, sc.sa, sc.prior);
          for (std::size_t i = 0; i < b; ++i)
            resid[i] -= cfg.prior_scale * qp.at(i, 0);
        }

        double loss = 0.0;
        const double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
          loss += 0.5 * resid[i] * resid[i] * inv_var * inv_b;
        double psi_sq = 0.0;
        for (const double p : mem.critic.params) psi_sq += p * p;
        loss += cfg.ridge_weight * psi_sq;
        require(std::isfinite(loss), "non-finite critic loss");

        Matrix dout(b, 1);
        for (std::size_t i = 0; i < b; ++i)
          dout.at(i, 0) = -resid[i] * inv_var * inv_b;
        sc.grad.assign(mem.critic.params.size(), 0.0);
        mlp_batch_backward(mem.critic, sc.critic, dout, sc.grad);
        if (cfg.ridge_weight != 0.0)
          axpy(sc.grad, mem.critic.params, 2.0 * cfg.ridge_weight);
        projected_step(mem.critic.params, sc.grad, cfg.critic_lr,
                       StepMode::adam, &mem.critic_adam,
                       cfg.projection_radius, &agent.projection_hit,
                       "bbac critic");

        // Lagged target: Polyak pull, exact copy when aliased or at β = 1.
        if (cfg.alias_targets || cfg.target_coef == 1.0) {
          mem.target.params = mem.critic.params;
        } else if (cfg.target_coef > 0.0) {
          Vec& om = mem.target.params;
          const Vec& ps = mem.critic.params;
          for (std::size_t j = 0; j < om.size(); ++j)
            om[j] -= cfg.target_coef * (om[j] - ps[j]);
          if (norm2(om) > cfg.projection_radius) {
            om = project_ball(om, cfg.projection_radius);
            if (!agent.projection_hit) {
              agent.projection_hit = true;
              std::fprintf(stderr,
                           "[bbac] target step: projection radius %g bound\n",
                           cfg.projection_radius);
            }
          }
        }

        // Exploratory actor: ascend the member critic (prior included).
        if (sc.upsilon.rows != b || sc.upsilon.cols != agent.act_dim)
          sc.upsilon = Matrix(b, agent.act_dim);
        for (double& u : sc.upsilon.data) u = rng.normal();
        const CriticBatchFn member_fn = [&](const Matrix& so, const Matrix& ao,
                                            Vec& qv, Matrix& dq) {
          member_critic_batch(agent, mem, so, ao, sc.s2a2, sc.critic2,
                              sc.prior2, sc.din, qv, dq);
        };
        const PolicyObjective obj = policy_objective_gradient(
            mem.actor, sc.s, sc.upsilon, member_fn, 0.0);
        sc.neg.assign(obj.grad.size(), 0.0);
        axpy(sc.neg, obj.grad, -1.0);
        projected_step(mem.actor.net.params, sc.neg, cfg.actor_lr,
                       StepMode::adam, &mem.actor_adam, cfg.projection_radius,
                       &agent.projection_hit, "bbac actor");
      } catch (const numeric_error& e) {
        throw numeric_error("update_posterior member " + std::to_string(l) +
                            ": " + e.what());
      }
    }
  }
}

void update_behavioural_policy(BbacAgent& agent, std::size_t iterations,
                               Rng& rng) {
  require(agent.buffer.size() > 0,
          "update_behavioural_policy: empty replay buffer");
  const BbacConfig& cfg = agent.cfg;
  BbacScratch& sc = agent.scratch;
  std::vector<char> done;

  for (std::size_t it = 0; it < iterations; ++it) {
    const std::size_t i1 = rng.uniform_int(agent.members.size());
    const std::size_t i2 = rng.uniform_int(agent.members.size());
    const auto idx = agent.buffer.sample_indices(cfg.batch_size, rng);
    fill_minibatch(agent.buffer, idx, agent.obs_dim, agent.act_dim, sc.s, sc.a,
                   sc.s2, sc.q, done);
    const std::size_t b = idx.size();

    if (sc.upsilon.rows != b || sc.upsilon.cols != agent.act_dim)
      sc.upsilon = Matrix(b, agent.act_dim);
    for (double& u : sc.upsilon.data) u = rng.normal();

    const CriticBatchFn min_fn = [&](const Matrix& so, const Matrix& ao,
                                     Vec& qv, Matrix& dq) {
      member_critic_batch(agent, agent.members[i1], so, ao, sc.s2a2,
                          sc.critic2, sc.prior2, sc.din, qv, dq);
      if (i2 == i1) return;
      member_critic_batch(agent, agent.members[i2], so, ao, sc.s2a2, sc.critic,
                          sc.prior, sc.din, sc.q2, sc.dq2);
      for (std::size_t i = 0; i < qv.size(); ++i)
        if (sc.q2[i] < qv[i]) {
          qv[i] = sc.q2[i];
          for (std::size_t k = 0; k < dq.cols; ++k)
            dq.at(i, k) = sc.dq2.at(i, k);
        }
    };
    const PolicyObjective obj = policy_objective_gradient(
        agent.behavioural, sc.s, sc.upsilon, min_fn, cfg.entropy_weight);
    sc.neg.assign(obj.grad.size(), 0.0);
    axpy(sc.neg, obj.grad, -1.0);
    projected_step(agent.behavioural.net.params, sc.neg, cfg.behavioural_lr,
                   StepMode::adam, &agent.behavioural_adam,
                   cfg.projection_radius, &agent.projection_hit,
                   "bbac behavioural");
  }
}

// ---- Episode loop -----------------------------------------------------------

double evaluate_policy(const GaussianPolicy& policy, ContinuousEnv& env,
                       std::size_t n_episodes, Rng& rng) {
  require(n_episodes >= 1, "evaluate_policy: need at least one episode");
  double total = 0.0;
  for (std::size_t ep = 0; ep < n_episodes; ++ep) {
    Vec s = env.reset(rng);
    double ret = 0.0;
    for (std::size_t t = 0; t < env.horizon(); ++t) {
      const Vec a = act(policy, s, ActMode::mean, rng);
      const EnvStep es = env.step(a, rng);
      ret += es.reward;
      s = es.obs;
      if (es.done) break;
    }
    total += ret;
  }
  return total / static_cast<double>(n_episodes);
}

std::vector<Vec> disagreement_probes(std::size_t obs_dim, std::size_t act_dim,
                                     double act_bound, std::size_t count,
                                     Rng& rng) {
  require(count >= 1, "disagreement_probes: need at least one probe");
  std::vector<Vec> probes;
  probes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vec p(obs_dim + act_dim);
    for (std::size_t j = 0; j < obs_dim; ++j) p[j] = rng.uniform(-1.0, 1.0);
    for (std::size_t j = 0; j < act_dim; ++j)
      p[obs_dim + j] = rng.uniform(-act_bound, act_bound);
    probes.push_back(std::move(p));
  }
  return probes;
}

double ensemble_disagreement(const BbacAgent& agent,
                             const std::vector<Vec>& probes) {
  require(!probes.empty(), "ensemble_disagreement: empty probe set");
  const std::size_t L = agent.members.size();
  double total = 0.0;
  Vec obs(agent.obs_dim), action(agent.act_dim);
  for (const Vec& p : probes) {
    require(p.size() == agent.obs_dim + agent.act_dim,
            "ensemble_disagreement: probe dimension mismatch");
    std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(agent.obs_dim),
              obs.begin());
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(agent.obs_dim), p.end(),
              action.begin());
    double mean = 0.0, sq = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const double q = agent.member_q(l, obs, action, false);
      mean += q / static_cast<double>(L);
      sq += q * q / static_cast<double>(L);
    }
    total += (sq - mean * mean) / static_cast<double>(probes.size());
  }
  return std::max(total, 0.0);
}

void run_training(BbacAgent& agent, ContinuousEnv& env,
                  std::size_t total_steps, Rng& rng, const MetricSink& sink) {
  require(total_steps >= 1, "run_training: total_steps must be >= 1");
  require(env.obs_dim() == agent.obs_dim && env.act_dim() == agent.act_dim,
          "run_training: environment dimensions do not match the agent");
  const BbacConfig& cfg = agent.cfg;

  Rng probe_rng = rng.spawn(1);

  Vec s = env.reset(rng);
  std::size_t episode_len = 0;
  double episode_return = 0.0;
  agent.active_member = rng.uniform_int(agent.members.size());
  if (sink)
    sink({0, "control.active_member", static_cast<double>(agent.active_member)});

  std::size_t pending = 0;
  for (std::size_t step = 1; step <= total_steps; ++step) {
    const Vec a =
        act(agent.members[agent.active_member].actor, s, ActMode::sample, rng);
    const EnvStep es = env.step(a, rng);
    episode_len += 1;
    episode_return += es.reward;

    Transition t;
    t.s = s;
    t.a = a;
    t.r = es.reward;
    t.s_next = es.obs;
    t.done = es.done;  // horizon truncation below never gates bootstrapping
    agent.buffer.push(std::move(t));
    s = es.obs;

    if (es.done || episode_len >= env.horizon()) {
      if (sink) sink({step, "control.train_return", episode_return});
      s = env.reset(rng);
      episode_len = 0;
      episode_return = 0.0;
      agent.active_member = rng.uniform_int(agent.members.size());
      if (sink)
        sink({step, "control.active_member", static_cast<double>(agent.active_member)});
    }

    if (agent.buffer.size() >= cfg.batch_size) {
      pending += 1;
      if (pending >= cfg.env_steps_per_update) {
        update_posterior(agent, pending, rng);
        update_behavioural_policy(agent, pending, rng);
        pending = 0;
      }
    }

    if (step % cfg.eval_every == 0 && sink) {
      const Vec saved = env.raw_state();
      const double ret =
          evaluate_policy(agent.behavioural, env, cfg.eval_episodes, rng);
      env.set_raw_state(saved);
      sink({step, "control.eval_return", ret});
      // Disagreement is tracked at visited states: probe rows pair buffer
      // states with uniformly drawn actions, redrawn at every evaluation.
      std::vector<Vec> probes;
      probes.reserve(32);
      for (int p = 0; p < 32; ++p) {
        const Transition& tr =
            agent.buffer.at(probe_rng.uniform_int(agent.buffer.size()));
        Vec row(agent.obs_dim + agent.act_dim);
        std::copy(tr.s.begin(), tr.s.end(), row.begin());
        for (std::size_t k = 0; k < agent.act_dim; ++k)
          row[agent.obs_dim + k] =
              probe_rng.uniform(-agent.act_bound, agent.act_bound);
        probes.push_back(std::move(row));
      }
      sink({step, "rp.ensemble_var", ensemble_disagreement(agent, probes)});
    }
  }
}

// ---- Diagnostics & persistence ----------------------------------------------

Matrix visitation_histogram(const ReplayBuffer& buffer, const GridSpec& grid) {
  require(grid.nx >= 1 && grid.ny >= 1,
          "visitation_histogram: grid must have at least one cell");
  require(grid.x_hi > grid.x_lo && grid.y_hi > grid.y_lo,
          "visitation_histogram: grid bounds must be increasing");
  Matrix counts(grid.nx, grid.ny);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Vec& s = buffer.at(i).s;
    require(s.size() == 2, "visitation_histogram: states must be 2-D");
    const double fx =
        (s[0] - grid.x_lo) / (grid.x_hi - grid.x_lo) * grid.nx;
    const double fy =
        (s[1] - grid.y_lo) / (grid.y_hi - grid.y_lo) * grid.ny;
    const std::size_t ix = static_cast<std::size_t>(std::min(
        static_cast<double>(grid.nx - 1), std::max(0.0, std::floor(fx))));
    const std::size_t iy = static_cast<std::size_t>(std::min(
        static_cast<double>(grid.ny - 1), std::max(0.0, std::floor(fy))));
    counts.at(ix, iy) += 1.0;
  }
  return counts;
}

namespace {

void write_vec(std::ofstream& f, const Vec& v) {
  const std::uint64_t n = v.size();
  f.write(reinterpret_cast<const char*>(&n), sizeof(n));
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
}

void read_vec(std::ifstream& f, Vec& v, const char* what) {
  std::uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!f || n != v.size())
    throw numeric_error(std::string("load_agent: size mismatch for ") + what);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw numeric_error("load_agent: truncated file");
}

constexpr char kMagic[4] = {'B', 'B', 'O', 'C'};

}  // namespace

void save_agent(const BbacAgent& agent, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw numeric_error("save_agent: cannot open " + path);
  f.write(kMagic, 4);
  const std::uint32_t version = 1;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t count = agent.members.size();
  f.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const BbacMember& mem : agent.members) {
    write_vec(f, mem.critic.params);
    write_vec(f, mem.target.params);
    write_vec(f, mem.prior.params);
    write_vec(f, mem.actor.net.params);
  }
  write_vec(f, agent.behavioural.net.params);
  if (!f) throw numeric_error("save_agent: write failed for " + path);
}

void load_agent(BbacAgent& agent, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw numeric_error("load_agent: cannot open " + path);
  char magic[4] = {};
  f.read(magic, 4);
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!f || std::memcmp(magic, kMagic, 4) != 0 || version != 1)
    throw numeric_error("load_agent: not a checkpoint file: " + path);
  std::uint64_t count = 0;
  f.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!f || count != agent.members.size())
    throw numeric_error("load_agent: ensemble size mismatch");
  for (BbacMember& mem : agent.members) {
    read_vec(f, mem.critic.params, "critic");
    read_vec(f, mem.target.params, "target");
    read_vec(f, mem.prior.params, "prior");
    read_vec(f, mem.actor.net.params, "actor");
  }
  read_vec(f, agent.behavioural.net.params, "behavioural");
}

}  // namespace bbo
