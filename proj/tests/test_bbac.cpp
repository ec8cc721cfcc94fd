#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "bbo/bbac.hpp"
#include "bbo/mlp.hpp"
#include "bbo/nonlinear_pe.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bbo;

namespace {

// Deterministic 2-D episodic task obeying the env contract: the full state
// is the observation, episodes end after exactly two steps (s0 crosses the
// threshold), rewards depend only on the clipped action.
class TestEnv final : public ContinuousEnv {
 public:
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 1; }
  std::size_t horizon() const override { return 3; }
  Vec reset(Rng&) override {
    s_ = {-1.0, -1.0};
    return s_;
  }
  Vec reset_uniform(Rng& rng) override { return reset(rng); }
  EnvStep step(const Vec& action, Rng&) override {
    const double ax = std::clamp(action.at(0), -1.0, 1.0);
    s_[0] = std::min(1.0, s_[0] + 0.25);
    s_[1] = std::min(1.0, std::max(-1.0, s_[1] + 0.1 * ax));
    return {s_, 0.5 - std::abs(ax), s_[0] > -0.6};
  }
  Vec raw_state() const override { return s_; }
  void set_raw_state(const Vec& state) override { s_ = state; }
  Vec observe() const override { return s_; }

 private:
  Vec s_ = {-1.0, -1.0};
};

// Zero every parameter of a network.
void zero_params(MlpApproximator& net) {
  std::fill(net.params.begin(), net.params.end(), 0.0);
}

// With all weights zero the last output_dim parameters are the output biases.
double& output_bias(MlpApproximator& net, std::size_t head) {
  return net.params[net.params.size() - net.output_dim() + head];
}

Transition make_transition(Rng& rng) {
  Transition t;
  t.s = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  t.a = {rng.uniform(-1.0, 1.0)};
  t.r = rng.uniform(-1.0, 1.0);
  t.s_next = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  t.done = rng.uniform() < 0.2;
  return t;
}

void fill_buffer(BbacAgent& agent, std::size_t n, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) agent.buffer.push(make_transition(rng));
}

BbacConfig small_config(std::size_t ensemble) {
  BbacConfig c;
  c.ensemble_size = ensemble;
  c.hidden = {4};
  c.batch_size = 4;
  c.replay_capacity = 64;
  return c;
}

std::vector<const MlpApproximator*> all_nets(const BbacAgent& agent) {
  std::vector<const MlpApproximator*> nets;
  for (const BbacMember& m : agent.members) {
    nets.push_back(&m.critic);
    nets.push_back(&m.target);
    nets.push_back(&m.prior);
    nets.push_back(&m.actor.net);
  }
  nets.push_back(&agent.behavioural.net);
  return nets;
}

bool agents_identical(const BbacAgent& a, const BbacAgent& b) {
  const auto na = all_nets(a), nb = all_nets(b);
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i)
    if (na[i]->params != nb[i]->params) return false;
  return true;
}

}  // namespace

TEST_CASE("gaussian policy heads clamp log-stds and keep means raw") {
  Rng rng(11);
  GaussianPolicy pol(2, 2, {3}, 1.0, rng);
  zero_params(pol.net);

  Vec mu, ls;
  policy_head(pol, {0.3, -0.4}, mu, ls);
  REQUIRE(mu.size() == 2);
  REQUIRE(ls.size() == 2);
  CHECK(mu[0] == 0.0);
  CHECK(ls[0] == 0.0);  // raw zero is inside the clamp window

  output_bias(pol.net, 0) = 0.4;    // mean heads come first
  output_bias(pol.net, 1) = -0.7;
  output_bias(pol.net, 2) = -1000.0;  // then raw log-stds, clamped
  output_bias(pol.net, 3) = 1000.0;
  policy_head(pol, {0.3, -0.4}, mu, ls);
  CHECK(mu[0] == 0.4);
  CHECK(mu[1] == -0.7);
  CHECK(ls[0] == GaussianPolicy::kLogStdMin);
  CHECK(ls[1] == GaussianPolicy::kLogStdMax);

  CHECK(pol.obs_dim() == 2);
  CHECK(pol.act_dim() == 2);
  CHECK_THROWS_AS(GaussianPolicy(2, 0, {3}, 1.0, rng), numeric_error);
  CHECK_THROWS_AS(GaussianPolicy(2, 1, {3}, 0.0, rng), numeric_error);
}

TEST_CASE("sampled actions collapse onto the mean at the log-std floor") {
  Rng rng(13);
  GaussianPolicy pol(2, 1, {4}, 2.0, rng);
  zero_params(pol.net);
  output_bias(pol.net, 0) = 0.8;
  output_bias(pol.net, 1) = -25.0;  // clamps to the floor

  const Vec obs = {0.1, -0.9};
  const Vec mean = act(pol, obs, ActMode::mean, rng);
  CHECK(mean.at(0) == doctest::Approx(2.0 * std::tanh(0.8)).epsilon(1e-15));
  for (int k = 0; k < 100; ++k) {
    const Vec a = act(pol, obs, ActMode::sample, rng);
    CHECK(std::abs(a.at(0) - mean.at(0)) < 1e-6);
  }
}

TEST_CASE("sampled actions respect the action box") {
  Rng rng(17);
  GaussianPolicy pol(2, 1, {6}, 0.5, rng);
  // Push the log-std head to the ceiling so draws are wide.
  output_bias(pol.net, 1) = 10.0;

  SUBCASE("squashed draws stay strictly inside") {
    for (int k = 0; k < 100000; ++k) {
      const Vec obs = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      const Vec a = act(pol, obs, ActMode::sample, rng);
      CHECK(std::abs(a.at(0)) <= 0.5);
    }
  }

  SUBCASE("unsquashed draws clip exactly to the bound") {
    pol.squash = false;
    std::size_t at_bound = 0;
    for (int k = 0; k < 10000; ++k) {
      const Vec a = act(pol, {0.0, 0.0}, ActMode::sample, rng);
      CHECK(std::abs(a.at(0)) <= 0.5);
      if (std::abs(a.at(0)) == 0.5) ++at_bound;
    }
    CHECK(at_bound > 9000);  // sigma = e^2 dwarfs the box: nearly always clipped
  }
}

TEST_CASE("pre-squash samples match the declared gaussian") {
  Rng rng(19);
  GaussianPolicy pol(2, 1, {4}, 1.0, rng);
  zero_params(pol.net);
  const double mu = 0.3, sigma = 0.7;
  output_bias(pol.net, 0) = mu;
  output_bias(pol.net, 1) = std::log(sigma);

  const std::size_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec a = act(pol, {0.4, 0.4}, ActMode::sample, rng);
    const double pre = std::atanh(a.at(0));
    sum += pre;
    sumsq += pre * pre;
  }
  const double nn = static_cast<double>(n);
  const double mean = sum / nn;
  const double sd = std::sqrt(sumsq / nn - mean * mean);
  CHECK(std::abs(mean - mu) < 3.0 * sigma / std::sqrt(nn));
  CHECK(std::abs(sd - sigma) < 3.0 * sigma / std::sqrt(2.0 * nn));
}

TEST_CASE("replay buffer is a fifo ring with uniform sampling") {
  ReplayBuffer buf(5);
  CHECK(buf.capacity() == 5);
  for (int i = 0; i < 8; ++i) {
    Transition t;
    t.s = {0.0, 0.0};
    t.a = {0.0};
    t.r = static_cast<double>(i);
    t.s_next = {0.0, 0.0};
    buf.push(std::move(t));
  }
  REQUIRE(buf.size() == 5);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(buf.at(i).r == static_cast<double>(i + 3));  // oldest three evicted
  CHECK_THROWS_AS(buf.at(5), numeric_error);
  CHECK_THROWS_AS(ReplayBuffer(0), numeric_error);

  SUBCASE("uniform draw passes a chi-square test at the 1% level") {
    ReplayBuffer big(20);
    Rng fill(1);
    for (int i = 0; i < 20; ++i) big.push(make_transition(fill));
    Rng rng(99);
    std::vector<std::size_t> counts(20, 0);
    const std::size_t draws = 20000;
    const auto idx = big.sample_indices(draws, rng);
    REQUIRE(idx.size() == draws);
    for (std::size_t i : idx) {
      REQUIRE(i < 20);
      counts[i] += 1;
    }
    const double expect = static_cast<double>(draws) / 20.0;
    double chi2 = 0.0;
    for (std::size_t c : counts) {
      const double d = static_cast<double>(c) - expect;
      chi2 += d * d / expect;
    }
    CHECK(chi2 < 36.19);  // 1% critical value, 19 degrees of freedom

    ReplayBuffer empty(4);
    CHECK_THROWS_AS(empty.sample_indices(1, rng), numeric_error);
  }
}

TEST_CASE("posterior update is inert at zero residual and exact at zero rates") {
  SUBCASE("zero critic, zero rewards: nothing moves, bitwise") {
    BbacConfig c = small_config(2);
    c.prior_scale = 0.0;
    c.ridge_weight = 0.0;
    Rng rng(23);
    BbacAgent agent(c, 2, 1, 1.0, rng);
    for (BbacMember& m : agent.members) {
      zero_params(m.critic);
      zero_params(m.target);
    }
    Rng fill(2);
    for (int i = 0; i < 6; ++i) {
      Transition t = make_transition(fill);
      t.r = 0.0;
      t.done = true;  // target reduces to the (zero) reward
      agent.buffer.push(std::move(t));
    }
    std::vector<Vec> actors_before;
    for (const BbacMember& m : agent.members)
      actors_before.push_back(m.actor.net.params);

    Rng up(3);
    update_posterior(agent, 3, up);
    for (std::size_t l = 0; l < agent.members.size(); ++l) {
      for (double p : agent.members[l].critic.params) CHECK(p == 0.0);
      for (double p : agent.members[l].target.params) CHECK(p == 0.0);
      // Flat zero critic has zero action gradient: the actor is untouched.
      CHECK(agent.members[l].actor.net.params == actors_before[l]);
    }
  }

  SUBCASE("zero learning rates isolate the exact target drift") {
    BbacConfig c = small_config(2);
    c.prior_scale = 0.0;
    c.critic_lr = 0.0;
    c.actor_lr = 0.0;
    const double beta = c.target_coef;  // 5e-3
    Rng rng(29);
    BbacAgent agent(c, 2, 1, 1.0, rng);
    for (BbacMember& m : agent.members) zero_params(m.critic);
    Rng fill(4);
    fill_buffer(agent, 12, fill);

    std::vector<Vec> omega0;
    for (const BbacMember& m : agent.members) omega0.push_back(m.target.params);

    Rng up(5);
    const std::size_t rounds = 25;
    for (std::size_t k = 1; k <= rounds; ++k) {
      update_posterior(agent, 1, up);
      const double want = std::pow(1.0 - beta, static_cast<double>(k));
      for (std::size_t l = 0; l < agent.members.size(); ++l) {
        const Vec& om = agent.members[l].target.params;
        for (std::size_t j = 0; j < om.size(); ++j) {
          if (std::abs(omega0[l][j]) < 1e-12) continue;
          CHECK(om[j] / omega0[l][j] == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("actor objective gradient matches finite differences") {
  Rng rng(31);
  GaussianPolicy pol(1, 1, {3}, 1.5, rng);

  MlpApproximator critic({2, 5, 1}, Activation::tanh);
  critic.params = glorot_init({2, 5, 1}, rng);
  MlpWorkspace cws;
  const CriticBatchFn critic_fn = [&](const Matrix& obs, const Matrix& a,
                                      Vec& q, Matrix& dq_da) {
    const std::size_t b = obs.rows;
    Matrix sa(b, 2);
    for (std::size_t i = 0; i < b; ++i) {
      sa.at(i, 0) = obs.at(i, 0);
      sa.at(i, 1) = a.at(i, 0);
    }
    const Matrix& out = mlp_batch_forward(critic, sa, cws);
    q.resize(b);
    for (std::size_t i = 0; i < b; ++i) q[i] = out.at(i, 0);
    Matrix dout(b, 1);
    for (std::size_t i = 0; i < b; ++i) dout.at(i, 0) = 1.0;
    Matrix dinput;
    mlp_batch_input_grad(critic, cws, dout, dinput);
    dq_da = Matrix(b, 1);
    for (std::size_t i = 0; i < b; ++i) dq_da.at(i, 0) = dinput.at(i, 1);
  };

  Matrix obs(4, 1), upsilon(4, 1);
  const double ovals[4] = {0.2, -0.7, 0.95, -0.3};
  const double uvals[4] = {0.3, -1.2, 0.7, 0.05};
  for (std::size_t i = 0; i < 4; ++i) {
    obs.at(i, 0) = ovals[i];
    upsilon.at(i, 0) = uvals[i];
  }
  const double alpha = 0.2;

  const PolicyObjective got =
      policy_objective_gradient(pol, obs, upsilon, critic_fn, alpha);
  REQUIRE(got.grad.size() == pol.net.params.size());
  CHECK(std::isfinite(got.value));

  auto value_at = [&](const Vec& theta) {
    GaussianPolicy probe = pol;
    probe.net.params = theta;
    return policy_objective_gradient(probe, obs, upsilon, critic_fn, alpha)
        .value;
  };
  const Vec fd = oracle::fd_gradient(value_at, pol.net.params, 1e-5);
  CHECK(oracle::max_rel_err(got.grad, fd, 1e-7) < 1e-4);

  SUBCASE("unsquashed policies are rejected") {
    pol.squash = false;
    CHECK_THROWS_AS(
        policy_objective_gradient(pol, obs, upsilon, critic_fn, alpha),
        numeric_error);
  }
}

TEST_CASE("behavioural updates ascend the entropy when critics are flat") {
  BbacConfig c = small_config(2);
  c.prior_scale = 0.0;
  c.entropy_weight = 0.2;
  c.behavioural_lr = 1e-2;
  Rng rng(37);
  BbacAgent agent(c, 2, 1, 1.0, rng);
  for (BbacMember& m : agent.members) {
    zero_params(m.critic);
    zero_params(m.target);
  }
  zero_params(agent.behavioural.net);
  // The squashed distribution has bounded support, so its entropy peaks at a
  // finite sigma (~0.88 for bound 1). Start far below that: ascent must
  // widen the policy.
  output_bias(agent.behavioural.net, 1) = -3.0;
  Rng fill(6);
  fill_buffer(agent, 16, fill);

  const double ls_before = output_bias(agent.behavioural.net, 1);
  Rng up(7);
  update_behavioural_policy(agent, 50, up);
  const double ls_after = output_bias(agent.behavioural.net, 1);
  CHECK(ls_after > ls_before + 0.1);  // flat critic leaves pure entropy ascent
  for (double p : agent.behavioural.net.params) CHECK(std::isfinite(p));

  SUBCASE("member values reduce to the output bias on zero weights") {
    output_bias(agent.members[0].critic, 0) = -5.0;
    output_bias(agent.members[1].critic, 0) = 5.0;
    Rng probe(8);
    for (int k = 0; k < 10; ++k) {
      const Vec s = {probe.uniform(-1.0, 1.0), probe.uniform(-1.0, 1.0)};
      const Vec a = {probe.uniform(-1.0, 1.0)};
      CHECK(agent.member_q(0, s, a, false) == -5.0);
      CHECK(agent.member_q(1, s, a, false) == 5.0);
      CHECK(agent.member_q(0, s, a, true) == 0.0);  // targets still zero
    }
  }
}

TEST_CASE("target-aliased ablation equals the unit-coefficient agent exactly") {
  BbacConfig ca = bac_ablation_config();
  CHECK(ca.alias_targets);
  ca.ensemble_size = 3;
  ca.hidden = {4};
  ca.batch_size = 4;
  ca.replay_capacity = 64;
  BbacConfig cb = ca;
  cb.alias_targets = false;
  cb.target_coef = 1.0;

  Rng ra(5), rb(5);
  BbacAgent a(ca, 2, 1, 1.0, ra);
  BbacAgent b(cb, 2, 1, 1.0, rb);
  REQUIRE(agents_identical(a, b));

  Rng fill(9);
  for (int i = 0; i < 10; ++i) {
    const Transition t = make_transition(fill);
    a.buffer.push(t);
    b.buffer.push(t);
  }
  Rng ua(10), ub(10);
  for (int k = 0; k < 10; ++k) {
    update_posterior(a, 1, ua);
    update_posterior(b, 1, ub);
    for (const BbacMember& m : a.members)
      CHECK(m.target.params == m.critic.params);  // pinned every step
    CHECK(agents_identical(a, b));
  }

  SUBCASE("single-model baseline configuration") {
    const BbacConfig n = naive_config();
    CHECK(n.ensemble_size == 1);
    CHECK(n.prior_scale == 0.0);
    CHECK(n.ridge_weight == 0.0);
    CHECK(n.entropy_weight == 0.0);
    CHECK(!n.alias_targets);
  }
}

TEST_CASE("training loop thompson-samples actors fairly and deterministically") {
  SUBCASE("per-episode member draws are uniform") {
    BbacConfig c;
    c.ensemble_size = 4;
    c.hidden = {3};
    c.batch_size = std::size_t(1) << 30;  // batch never fills: no updates
    c.replay_capacity = std::size_t(1) << 30;
    c.eval_every = 1000000;
    Rng rng(41);
    BbacAgent agent(c, 2, 1, 1.0, rng);
    TestEnv env;
    std::vector<std::size_t> counts(4, 0);
    std::size_t episodes = 0;
    run_training(agent, env, 2000, rng, [&](const MetricRow& row) {
      if (row.metric == "control.active_member" && row.step > 0) {
        counts[static_cast<std::size_t>(row.value)] += 1;
        ++episodes;
      }
    });
    REQUIRE(episodes >= 990);  // two-step episodes

    const double expect = static_cast<double>(episodes) / 4.0;
    const double band = 3.0 * std::sqrt(expect);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(static_cast<double>(counts[l]) > expect - band);
      CHECK(static_cast<double>(counts[l]) < expect + band);
    }
  }

  SUBCASE("identical seeds give identical metric streams") {
    auto collect = [] {
      BbacConfig c = small_config(2);
      c.eval_every = 40;
      c.eval_episodes = 2;
      Rng rng(7);
      BbacAgent agent(c, 2, 1, 1.0, rng);
      TestEnv env;
      std::vector<MetricRow> rows;
      run_training(agent, env, 150, rng,
                   [&rows](const MetricRow& r) { rows.push_back(r); });
      return rows;
    };
    const auto r1 = collect(), r2 = collect();
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
      CHECK(r1[i].step == r2[i].step);
      CHECK(r1[i].metric == r2[i].metric);
      CHECK(r1[i].value == r2[i].value);
    }
  }

  SUBCASE("evaluations fire on the configured cadence") {
    BbacConfig c;
    c.ensemble_size = 2;
    c.hidden = {3};
    c.batch_size = std::size_t(1) << 30;  // frozen policy throughout
    c.replay_capacity = std::size_t(1) << 30;
    c.eval_every = 100;
    c.eval_episodes = 2;
    Rng rng(43);
    BbacAgent agent(c, 2, 1, 1.0, rng);
    TestEnv env;
    std::vector<std::uint64_t> eval_steps, var_steps;
    std::vector<double> eval_values;
    run_training(agent, env, 350, rng, [&](const MetricRow& r) {
      if (r.metric == "control.eval_return") {
        eval_steps.push_back(r.step);
        eval_values.push_back(r.value);
      }
      if (r.metric == "rp.ensemble_var") var_steps.push_back(r.step);
    });
    CHECK(eval_steps == std::vector<std::uint64_t>{100, 200, 300});
    CHECK(var_steps == eval_steps);
    CHECK(agent.buffer.size() == 350);

    // No updates ran, so every evaluation saw the same frozen policy.
    REQUIRE(eval_values.size() == 3);
    CHECK(eval_values[0] == eval_values[1]);
    CHECK(eval_values[1] == eval_values[2]);
    TestEnv env2;
    Rng erng(1);
    CHECK(eval_values[0] ==
          evaluate_policy(agent.behavioural, env2, 2, erng));
  }
}

TEST_CASE("ensemble disagreement averages the member variance at probes") {
  Rng rng(47);
  const auto probes = disagreement_probes(2, 1, 0.7, 16, rng);
  REQUIRE(probes.size() == 16);
  for (const Vec& p : probes) {
    REQUIRE(p.size() == 3);
    CHECK(std::abs(p[0]) <= 1.0);
    CHECK(std::abs(p[1]) <= 1.0);
    CHECK(std::abs(p[2]) <= 0.7);
  }
  Rng rng2(47);
  CHECK(disagreement_probes(2, 1, 0.7, 16, rng2) == probes);

  BbacConfig c = small_config(2);
  c.prior_scale = 2.0;
  Rng arng(53);
  BbacAgent agent(c, 2, 1, 1.0, arng);
  for (BbacMember& m : agent.members) {
    zero_params(m.critic);
    zero_params(m.prior);
  }
  // Member values 0 + 2·1 = 2 and 1 + 2·0 = 1 at every probe: variance 1/4.
  output_bias(agent.members[0].prior, 0) = 1.0;
  output_bias(agent.members[1].critic, 0) = 1.0;
  CHECK(ensemble_disagreement(agent, probes) == 0.25);

  CHECK_THROWS_AS(ensemble_disagreement(agent, {}), numeric_error);
}

TEST_CASE("visitation histogram buckets buffered states with edge clamping") {
  const GridSpec grid{-1.0, 1.0, -1.0, 1.0, 2, 2};

  ReplayBuffer empty(8);
  const Matrix zeros = visitation_histogram(empty, grid);
  REQUIRE(zeros.rows == 2);
  REQUIRE(zeros.cols == 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(zeros.data[i] == 0.0);

  ReplayBuffer buf(8);
  const std::vector<Vec> states = {
      {-0.5, -0.5}, {0.5, 0.5}, {-5.0, 7.0}, {2.0, -2.0}};
  for (const Vec& s : states) {
    Transition t;
    t.s = s;
    t.a = {0.0};
    t.s_next = s;
    buf.push(std::move(t));
  }
  const Matrix h = visitation_histogram(buf, grid);
  CHECK(h.at(0, 0) == 1.0);  // (-0.5, -0.5)
  CHECK(h.at(1, 1) == 1.0);  // (0.5, 0.5)
  CHECK(h.at(0, 1) == 1.0);  // (-5, 7) clamped to the low-x, high-y corner
  CHECK(h.at(1, 0) == 1.0);  // (2, -2) clamped to the high-x, low-y corner
  double total = 0.0;
  for (double v : h.data) total += v;
  CHECK(total == static_cast<double>(buf.size()));

  ReplayBuffer bad(4);
  Transition t3;
  t3.s = {0.0, 0.0, 0.0};
  t3.a = {0.0};
  t3.s_next = {0.0, 0.0, 0.0};
  bad.push(std::move(t3));
  CHECK_THROWS_AS(visitation_histogram(bad, grid), numeric_error);

  const GridSpec degenerate{-1.0, 1.0, -1.0, 1.0, 0, 2};
  CHECK_THROWS_AS(visitation_histogram(buf, degenerate), numeric_error);
}

TEST_CASE("agent checkpoints roundtrip bitwise and validate structure") {
  BbacConfig c = small_config(2);
  Rng rng(59);
  BbacAgent trained(c, 2, 1, 1.0, rng);
  Rng fill(12);
  fill_buffer(trained, 12, fill);
  Rng up(13);
  update_posterior(trained, 5, up);
  update_behavioural_policy(trained, 5, up);

  const std::string path = "bbac_checkpoint_test.bin";
  save_agent(trained, path);

  Rng other(61);
  BbacAgent loaded(c, 2, 1, 1.0, other);
  CHECK(!agents_identical(trained, loaded));
  load_agent(loaded, path);
  CHECK(agents_identical(trained, loaded));
  const Vec s = {0.2, -0.3}, a = {0.4};
  CHECK(loaded.member_q(1, s, a, false) == trained.member_q(1, s, a, false));

  SUBCASE("ensemble size mismatch is rejected") {
    BbacConfig c3 = small_config(3);
    Rng r3(67);
    BbacAgent three(c3, 2, 1, 1.0, r3);
    CHECK_THROWS_WITH_AS(load_agent(three, path),
                         doctest::Contains("ensemble size"), numeric_error);
  }

  SUBCASE("truncated and foreign files are rejected") {
    {
      std::FILE* f = std::fopen("bbac_checkpoint_trunc.bin", "wb");
      REQUIRE(f != nullptr);
      std::fputs("BBOC", f);
      std::fclose(f);
    }
    BbacAgent victim(c, 2, 1, 1.0, rng);
    CHECK_THROWS_AS(load_agent(victim, "bbac_checkpoint_trunc.bin"),
                    numeric_error);
    {
      std::FILE* f = std::fopen("bbac_checkpoint_alien.bin", "wb");
      REQUIRE(f != nullptr);
      std::fputs("not a checkpoint at all", f);
      std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(load_agent(victim, "bbac_checkpoint_alien.bin"),
                         doctest::Contains("not a checkpoint"), numeric_error);
  }
}

TEST_CASE("update failures carry the member index and bad configs are rejected") {
  BbacConfig c = small_config(3);
  Rng rng(71);
  BbacAgent agent(c, 2, 1, 1.0, rng);

  Rng up(14);
  CHECK_THROWS_AS(update_posterior(agent, 1, up), numeric_error);  // empty
  CHECK_THROWS_AS(update_behavioural_policy(agent, 1, up), numeric_error);

  Rng fill(15);
  fill_buffer(agent, 12, fill);
  agent.members[2].critic.params[0] =
      std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(update_posterior(agent, 1, up),
                       doctest::Contains("member 2"), numeric_error);

  SUBCASE("configuration validation") {
    Rng r(73);
    BbacConfig bad = small_config(1);
    bad.target_coef = 1.5;
    CHECK_THROWS_AS(BbacAgent(bad, 2, 1, 1.0, r), numeric_error);
    bad = small_config(1);
    bad.gamma = 1.0;
    CHECK_THROWS_AS(BbacAgent(bad, 2, 1, 1.0, r), numeric_error);
    bad = small_config(1);
    bad.batch_size = 128;
    bad.replay_capacity = 64;
    CHECK_THROWS_AS(BbacAgent(bad, 2, 1, 1.0, r), numeric_error);
    bad = small_config(1);
    bad.model_noise_var = 0.0;
    CHECK_THROWS_AS(BbacAgent(bad, 2, 1, 1.0, r), numeric_error);
    CHECK_THROWS_AS(BbacAgent(small_config(1), 0, 1, 1.0, r), numeric_error);
    CHECK_THROWS_AS(BbacAgent(small_config(1), 2, 1, -1.0, r), numeric_error);
  }
}
