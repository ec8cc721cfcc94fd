#include "bbo/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "bbo/envs.hpp"
#include "bbo/linear_baselines.hpp"
#include "bbo/linear_bbo.hpp"
#include "bbo/nonlinear_pe.hpp"
#include "bbo/numerics.hpp"

namespace bbo {

namespace {

// ---- Small string utilities -------------------------------------------------

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw config_error("empty value for " + what);
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw config_error("bad number '" + s + "' for " + what);
  if (!std::isfinite(x))
    throw config_error("non-finite value '" + s + "' for " + what);
  return x;
}

std::uint64_t parse_u64(const std::string& raw, const std::string& what) {
  const double x = parse_number(raw, what);
  if (x < 0 || x != std::floor(x) || x > 1e18)
    throw config_error("expected a non-negative integer for " + what +
                       ", got '" + trim(raw) + "'");
  return static_cast<std::uint64_t>(x);
}

std::string fmt_g(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt_short(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// ---- Registry ----------------------------------------------------------------

struct AlgoSpec {
  std::string id;
  std::map<std::string, double> params;
};

struct ExperimentSpec {
  std::string id;
  std::string description;
  bool has_hidden = false;                // accepts a `hidden` layer list
  std::vector<std::size_t> hidden_default;
  std::vector<AlgoSpec> algos;
};

std::map<std::string, double> bbac_param_map(const BbacConfig& c) {
  return {
      {"ensemble_size", static_cast<double>(c.ensemble_size)},
      {"prior_scale", c.prior_scale},
      {"ridge_weight", c.ridge_weight},
      {"entropy_weight", c.entropy_weight},
      {"critic_lr", c.critic_lr},
      {"actor_lr", c.actor_lr},
      {"behavioural_lr", c.behavioural_lr},
      {"target_coef", c.target_coef},
      {"batch_size", static_cast<double>(c.batch_size)},
      {"replay_capacity", static_cast<double>(c.replay_capacity)},
      {"gamma", c.gamma},
      {"model_noise_var", c.model_noise_var},
      {"projection_radius", c.projection_radius},
      {"env_steps_per_update", static_cast<double>(c.env_steps_per_update)},
      {"eval_every", static_cast<double>(c.eval_every)},
      {"eval_episodes", static_cast<double>(c.eval_episodes)},
      {"total_steps", 100000.0},
  };
}

std::vector<AlgoSpec> neural_pe_algos(bool mcar) {
  // Per-environment tuned stepsizes; the puddle world uses the first value.
  const double bbo_fast = mcar ? 3e-3 : 1e-2;
  const double bbo_slow = mcar ? 1e-2 : 3e-2;
  const double prior_w = mcar ? 1e-1 : 3e-4;
  const double direct_lr = mcar ? 3e-4 : 1e-3;
  const double td_lr = mcar ? 3e-4 : 3e-3;
  const double tdc_omega = mcar ? 1e-5 : 1e-3;
  const double tdc_zeta = mcar ? 1e-2 : 1e-3;
  // The car's evaluation policy and dynamics are deterministic, so a single
  // rollout per probe is already exact; the puddle world needs averaging.
  const double gt_rollouts = mcar ? 1.0 : 1000.0;
  const std::map<std::string, double> common = {
      {"n_transitions", 20000.0}, {"batch_size", 512.0},
      {"total_steps", 100000.0},  {"eval_every", 1000.0},
      {"gt_rollouts", gt_rollouts}, {"grid", 25.0},
  };
  auto with = [&common](std::initializer_list<std::pair<const std::string, double>> xs) {
    std::map<std::string, double> m = common;
    m.insert(xs);
    return m;
  };
  return {
      {"gradient_bbo", with({{"fast_lr", bbo_fast},
                             {"slow_lr", bbo_slow},
                             {"prior_weight", prior_w},
                             {"fast_steps", 10.0}})},
      {"direct_bbo", with({{"lr", direct_lr}, {"prior_weight", prior_w}})},
      {"td0", with({{"lr", td_lr}})},
      {"tdc", with({{"alpha_omega", tdc_omega}, {"alpha_zeta", tdc_zeta}})},
  };
}

const std::vector<ExperimentSpec>& registry_impl() {
  static const std::vector<ExperimentSpec> reg = [] {
    std::vector<ExperimentSpec> r;

    r.push_back(
        {"triangle",
         "three-state spiral counterexample, population batch updates",
         false,
         {},
         {
             {"gradient_bbo",
              {{"total_steps", 8000.0}, {"record_every", 1.0},
               {"fast_lr", 0.8}, {"slow_lr", 0.1}, {"fast_steps", 10.0},
               {"prior_weight", 0.0}, {"stop_mse", 1e-2}}},
             {"td0",
              {{"total_steps", 50000.0}, {"record_every", 10.0},
               {"lr", 2e-3}, {"stop_factor", 1e4}}},
             {"tdc",
              {{"total_steps", 8000.0}, {"record_every", 1.0},
               {"alpha_omega", 0.1}, {"alpha_zeta", 1.0},
               {"stop_mse", 1e-2}}},
         }});

    r.push_back({"boyan",
                 "14-state descent chain, conjugate linear posterior fit",
                 false,
                 {},
                 {{"linear_bbo",
                   {{"n_transitions", 1000.0}, {"prior_variance", 10.0},
                    {"noise_variance", 1.0}, {"checkpoints", 10.0}}}}});

    const std::map<std::string, double> rmdp = {
        {"n_states", 400.0},   {"n_features", 21.0},
        {"n_transitions", 5000.0}, {"prior_variance", 10.0},
        {"noise_variance", 1.0},   {"mdp_seed", 7.0},
        {"checkpoints", 10.0}};
    r.push_back({"random_mdp_on",
                 "dense random MDP, on-policy uniform behaviour",
                 false,
                 {},
                 {{"linear_bbo", rmdp}}});
    std::map<std::string, double> rmdp_off = rmdp;
    rmdp_off["delta"] = 0.1;
    r.push_back({"random_mdp_off",
                 "dense random MDP, shifted behaviour with importance weights",
                 false,
                 {},
                 {{"linear_bbo", rmdp_off}}});

    r.push_back({"puddle_pe",
                 "puddle-world value evaluation from an iid uniform dataset",
                 true,
                 {256},
                 neural_pe_algos(false)});
    r.push_back({"mcar_pe",
                 "mountain-car value evaluation from an iid uniform dataset",
                 true,
                 {256},
                 neural_pe_algos(true)});

    r.push_back({"mcar_control",
                 "ensemble actor-critic control on continuous mountain car",
                 true,
                 {256, 256},
                 {
                     {"rp_bbac", bbac_param_map(BbacConfig{})},
                     {"naive", bbac_param_map(naive_config())},
                     {"bac", bbac_param_map(bac_ablation_config())},
                 }});
    return r;
  }();
  return reg;
}

const ExperimentSpec& find_experiment(const std::string& id) {
  for (const ExperimentSpec& e : registry_impl())
    if (e.id == id) return e;
  std::string known;
  for (const ExperimentSpec& e : registry_impl())
    known += (known.empty() ? "" : ", ") + e.id;
  throw config_error("unknown experiment '" + id + "' (known: " + known + ")");
}

const AlgoSpec& find_algo(const ExperimentSpec& exp, const std::string& id) {
  for (const AlgoSpec& a : exp.algos)
    if (a.id == id) return a;
  std::string known;
  for (const AlgoSpec& a : exp.algos)
    known += (known.empty() ? "" : ", ") + a.id;
  throw config_error("unknown algorithm '" + id + "' for experiment '" +
                     exp.id + "' (known: " + known + ")");
}

// ---- Config access helpers ----------------------------------------------------

double P(const RunConfig& cfg, const std::string& key) {
  const auto it = cfg.params.find(key);
  if (it == cfg.params.end())
    throw config_error("internal: parameter '" + key + "' not defaulted");
  return it->second;
}

std::size_t Pz(const RunConfig& cfg, const std::string& key) {
  const double x = P(cfg, key);
  if (x < 0 || x != std::floor(x))
    throw config_error("parameter '" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(x);
}

// ---- Metric emission ----------------------------------------------------------

void emit(const MetricSink& sink, std::uint64_t step, const char* metric,
          double value) {
  sink(MetricRow{static_cast<std::size_t>(step), metric, value});
}

// ---- Triangle runners -----------------------------------------------------------

double spiral_mse(const ValueModel& m) {
  const std::vector<Vec> probes = {{0.0}, {1.0}, {2.0}};
  return evaluate_mse(m, probes, Vec(3, 0.0), Vec(3, 1.0));
}

void run_triangle(const RunConfig& cfg, std::uint64_t, const MetricSink& sink) {
  const NonlinearBatch batch = triangle_expected_batch();
  const double gamma = 0.9;
  const std::size_t total = Pz(cfg, "total_steps");
  const std::size_t every = std::max<std::size_t>(1, Pz(cfg, "record_every"));

  auto record = [&](std::size_t k, const ValueModel& net, double mse) {
    emit(sink, k, "pe.mse", mse);
    emit(sink, k, "pe.omega", net.params()[0]);
  };

  if (cfg.algorithm == "td0") {
    TriangleValueModel net(0.0);
    const Vec phi0 = net.params();
    const double mse0 = spiral_mse(net);
    const double lr = P(cfg, "lr");
    const double stop = P(cfg, "stop_factor") * mse0;
    record(0, net, mse0);
    for (std::size_t k = 1; k <= total; ++k) {
      direct_bbo_step(net, batch, 0.0, phi0, gamma, lr, StepMode::sgd);
      const double mse = spiral_mse(net);
      if (k % every == 0 || mse >= stop || k == total) record(k, net, mse);
      if (mse >= stop) break;  // divergence established; avoid overflow
    }
    return;
  }

  if (cfg.algorithm == "gradient_bbo") {
    TriangleValueModel seed_net(0.0);
    MapPair pair(seed_net, P(cfg, "prior_weight"), gamma);
    pair.mode = StepMode::sgd_normalized;
    pair.fast = constant_schedule(P(cfg, "fast_lr"));
    pair.slow = constant_schedule(P(cfg, "slow_lr"));
    pair.fast_steps_per_slow = std::max<std::size_t>(1, Pz(cfg, "fast_steps"));
    const double stop = P(cfg, "stop_mse");
    record(0, *pair.omega, spiral_mse(*pair.omega));
    for (std::size_t k = 1; k <= total; ++k) {
      gradient_bbo_round(pair, batch);
      const double mse = spiral_mse(*pair.omega);
      if (k % every == 0 || mse < stop || k == total)
        record(k, *pair.omega, mse);
      if (mse < stop) break;
    }
    return;
  }

  // tdc
  TriangleValueModel net(0.0);
  Vec zeta(1, 0.0);
  const double a_omega = P(cfg, "alpha_omega"), a_zeta = P(cfg, "alpha_zeta");
  const double stop = P(cfg, "stop_mse");
  record(0, net, spiral_mse(net));
  for (std::size_t k = 1; k <= total; ++k) {
    nonlinear_tdc_step(net, zeta, batch, gamma, a_omega, a_zeta,
                       StepMode::sgd_normalized);
    const double mse = spiral_mse(net);
    if (k % every == 0 || mse < stop || k == total) record(k, net, mse);
    if (mse < stop) break;
  }
}

// ---- Linear conjugate runners (boyan, random_mdp_*) ----------------------------

double linear_state_mse(const Vec& omega, const FeatureMap& fm,
                        const Vec& truth) {
  double acc = 0.0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const Vec v = fm.features(s);
    double pred = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) pred += v[j] * omega[j];
    const double d = pred - truth[s];
    acc += d * d;
  }
  return acc / static_cast<double>(truth.size());
}

double max_abs(const Vec& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

void run_linear_conjugate(const RunConfig& cfg, std::uint64_t seed,
                          const MetricSink& sink) {
  TabularMdp mdp;
  FeatureMap fm;
  TabularPolicy behaviour;
  bool off_policy = false;
  SamplingMode mode = SamplingMode::iid_reset;

  if (cfg.experiment == "boyan") {
    std::tie(mdp, fm) = boyan_chain();
    mode = SamplingMode::trajectory;
  } else {
    std::tie(mdp, fm) = random_mdp(Pz(cfg, "n_states"), Pz(cfg, "n_features"),
                                   Pz(cfg, "mdp_seed"));
    if (cfg.experiment == "random_mdp_off") {
      behaviour = shifted_policy(mdp, P(cfg, "delta"));
      off_policy = true;
    }
  }
  const TabularPolicy policy = uniform_policy(mdp);
  const Vec truth = exact_tabular_values(mdp, policy);

  Rng rng(seed);
  const std::size_t n = Pz(cfg, "n_transitions");
  const Dataset ds = generate_dataset(mdp, policy, n, mode, rng,
                                      off_policy ? &behaviour : nullptr);

  const std::size_t dim = fm.dim();
  const Vec phi0(dim, 0.0);
  const Matrix sigma0 = scale(Matrix::identity(dim), P(cfg, "prior_variance"));
  const double sigma2 = P(cfg, "noise_variance");

  // Posterior-mean learning curve on growing dataset prefixes.
  const std::size_t k = std::max<std::size_t>(1, Pz(cfg, "checkpoints"));
  for (std::size_t j = 1; j <= k; ++j) {
    const std::size_t nj = (j == k) ? n : (n * j) / k;
    if (nj == 0) continue;
    Dataset prefix;
    prefix.mode = ds.mode;
    prefix.transitions.assign(ds.transitions.begin(),
                              ds.transitions.begin() + nj);
    const Vec omega = fit_exact_omega(prefix, fm, phi0, sigma0, sigma2,
                                      mdp.gamma);
    emit(sink, nj, "pe.mse", linear_state_mse(omega, fm, truth));
  }

  const Vec lstd = lstd_fit(ds, fm, mdp.gamma);
  emit(sink, n, "pe.mse_lstd", linear_state_mse(lstd, fm, truth));

  const Vec freq = fit_exact_omega_frequentist(ds, fm, mdp.gamma);
  Vec diff = freq;
  axpy(diff, lstd, -1.0);
  emit(sink, n, "pe.freq_lstd_rel_err",
       max_abs(diff) / std::max(max_abs(lstd), 1e-12));
}

// ---- Neural policy-evaluation runners (puddle_pe, mcar_pe) ----------------------

void run_neural_pe(const RunConfig& cfg, std::uint64_t seed,
                   const MetricSink& sink) {
  const bool mcar = cfg.experiment == "mcar_pe";
  const double gamma = 0.98;

  std::unique_ptr<ContinuousEnv> env;
  ContinuousPolicy policy;
  double x_lo, x_hi, y_lo, y_hi;
  if (mcar) {
    env = std::make_unique<MountainCarEnv>();
    policy = mountain_car_pe_policy();
    x_lo = MountainCarEnv::kMinPos;
    x_hi = MountainCarEnv::kMaxPos;
    y_lo = -MountainCarEnv::kMaxSpeed;
    y_hi = MountainCarEnv::kMaxSpeed;
  } else {
    env = std::make_unique<PuddleWorldEnv>();
    policy = puddle_up_down_policy();
    x_lo = 0.0, x_hi = 1.0, y_lo = 0.0, y_hi = 1.0;
  }

  Rng rng(seed);
  const Dataset ds = generate_dataset(*env, policy, Pz(cfg, "n_transitions"),
                                      SamplingMode::iid_reset, rng);

  // Ground truth at an evenly spaced grid of raw states, shared across seeds.
  const std::size_t grid = std::max<std::size_t>(2, Pz(cfg, "grid"));
  std::vector<Vec> probe_raw, probe_obs;
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double fx = static_cast<double>(i) / static_cast<double>(grid - 1);
      const double fy = static_cast<double>(j) / static_cast<double>(grid - 1);
      const Vec raw = {x_lo + fx * (x_hi - x_lo), y_lo + fy * (y_hi - y_lo)};
      probe_raw.push_back(raw);
      env->set_raw_state(raw);
      probe_obs.push_back(env->observe());
    }
  }
  Rng gt_rng(424242);
  const auto gt = mc_values(*env, policy, probe_raw, Pz(cfg, "gt_rollouts"),
                            env->horizon(), gamma, gt_rng);
  Vec truth(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) truth[i] = gt[i].mean;
  const Vec w(truth.size(), 1.0);

  const std::vector<std::size_t>& hidden =
      cfg.hidden.empty() ? find_experiment(cfg.experiment).hidden_default
                         : cfg.hidden;
  std::vector<std::size_t> sizes = {env->obs_dim()};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  const Activation act =
      cfg.algorithm == "tdc" ? Activation::tanh : Activation::relu;
  MlpApproximator net(sizes, act);
  net.params = glorot_init(sizes, rng);
  MlpValueModel model(net);

  const std::size_t total = Pz(cfg, "total_steps");
  const std::size_t every = std::max<std::size_t>(1, Pz(cfg, "eval_every"));
  const std::size_t batch_size = std::max<std::size_t>(1, Pz(cfg, "batch_size"));

  if (cfg.algorithm == "gradient_bbo") {
    MapPair pair(model, P(cfg, "prior_weight"), gamma);
    pair.mode = StepMode::adam;
    pair.fast = constant_schedule(P(cfg, "fast_lr"));
    pair.slow = constant_schedule(P(cfg, "slow_lr"));
    pair.fast_steps_per_slow = std::max<std::size_t>(1, Pz(cfg, "fast_steps"));
    emit(sink, 0, "pe.mse", evaluate_mse(*pair.omega, probe_obs, truth, w));
    for (std::size_t k = 1; k <= total; ++k) {
      const NonlinearBatch b =
          make_pe_batch(ds, sample_indices(ds.size(), batch_size, rng));
      map_round(pair, b);
      if (k % every == 0 || k == total)
        emit(sink, k, "pe.mse", evaluate_mse(*pair.omega, probe_obs, truth, w));
    }
    return;
  }

  if (cfg.algorithm == "tdc") {
    Vec zeta(model.param_count(), 0.0);
    AdamState a_omega, a_zeta;
    const double lr_omega = P(cfg, "alpha_omega");
    const double lr_zeta = P(cfg, "alpha_zeta");
    emit(sink, 0, "pe.mse", evaluate_mse(model, probe_obs, truth, w));
    for (std::size_t k = 1; k <= total; ++k) {
      const NonlinearBatch b =
          make_pe_batch(ds, sample_indices(ds.size(), batch_size, rng));
      nonlinear_tdc_step(model, zeta, b, gamma, lr_omega, lr_zeta,
                         StepMode::adam, &a_omega, &a_zeta);
      if (k % every == 0 || k == total)
        emit(sink, k, "pe.mse", evaluate_mse(model, probe_obs, truth, w));
    }
    return;
  }

  // td0 and direct_bbo share the single-network semi-gradient loop.
  const double lambda =
      cfg.algorithm == "direct_bbo" ? P(cfg, "prior_weight") : 0.0;
  const double lr = P(cfg, "lr");
  const Vec phi0 = model.params();
  AdamState adam;
  emit(sink, 0, "pe.mse", evaluate_mse(model, probe_obs, truth, w));
  for (std::size_t k = 1; k <= total; ++k) {
    const NonlinearBatch b =
        make_pe_batch(ds, sample_indices(ds.size(), batch_size, rng));
    direct_bbo_step(model, b, lambda, phi0, gamma, lr, StepMode::adam, &adam);
    if (k % every == 0 || k == total)
      emit(sink, k, "pe.mse", evaluate_mse(model, probe_obs, truth, w));
  }
}

// ---- Control runner (mcar_control) ----------------------------------------------

void run_mcar_control(const RunConfig& cfg, std::uint64_t seed,
                      const MetricSink& sink) {
  BbacConfig c;
  if (cfg.algorithm == "naive") c = naive_config();
  else if (cfg.algorithm == "bac") c = bac_ablation_config();

  c.ensemble_size = Pz(cfg, "ensemble_size");
  c.prior_scale = P(cfg, "prior_scale");
  c.ridge_weight = P(cfg, "ridge_weight");
  c.entropy_weight = P(cfg, "entropy_weight");
  c.critic_lr = P(cfg, "critic_lr");
  c.actor_lr = P(cfg, "actor_lr");
  c.behavioural_lr = P(cfg, "behavioural_lr");
  c.target_coef = P(cfg, "target_coef");
  c.batch_size = Pz(cfg, "batch_size");
  c.replay_capacity = Pz(cfg, "replay_capacity");
  c.gamma = P(cfg, "gamma");
  c.model_noise_var = P(cfg, "model_noise_var");
  c.projection_radius = P(cfg, "projection_radius");
  c.env_steps_per_update = Pz(cfg, "env_steps_per_update");
  c.eval_every = Pz(cfg, "eval_every");
  c.eval_episodes = Pz(cfg, "eval_episodes");
  if (!cfg.hidden.empty()) c.hidden = cfg.hidden;

  MountainCarEnv env;
  Rng rng(seed);
  BbacAgent agent(c, env.obs_dim(), env.act_dim(), 1.0, rng);
  run_training(agent, env, Pz(cfg, "total_steps"), rng, sink);
}

void dispatch_seed(const RunConfig& cfg, std::uint64_t seed,
                   const MetricSink& sink) {
  if (cfg.experiment == "triangle")
    run_triangle(cfg, seed, sink);
  else if (cfg.experiment == "boyan" || cfg.experiment == "random_mdp_on" ||
           cfg.experiment == "random_mdp_off")
    run_linear_conjugate(cfg, seed, sink);
  else if (cfg.experiment == "puddle_pe" || cfg.experiment == "mcar_pe")
    run_neural_pe(cfg, seed, sink);
  else if (cfg.experiment == "mcar_control")
    run_mcar_control(cfg, seed, sink);
  else
    throw config_error("unknown experiment '" + cfg.experiment + "'");
}

// ---- Seed list parsing ------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& value) {
  const std::string s = trim(value);
  const std::size_t dots = s.find("..");
  std::vector<std::uint64_t> seeds;
  if (dots != std::string::npos) {
    const std::uint64_t lo = parse_u64(s.substr(0, dots), "seeds");
    const std::uint64_t hi = parse_u64(s.substr(dots + 2), "seeds");
    if (hi < lo) throw config_error("seed range '" + s + "' is reversed");
    if (hi - lo >= 100000) throw config_error("seed range '" + s + "' too large");
    for (std::uint64_t v = lo; v <= hi; ++v) seeds.push_back(v);
  } else {
    for (const std::string& part : split(s, ','))
      seeds.push_back(parse_u64(part, "seeds"));
  }
  if (seeds.empty()) throw config_error("empty seed list");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size())
    throw config_error("duplicate seeds in '" + s + "'");
  return seeds;
}

std::vector<std::size_t> parse_hidden(const std::string& value) {
  std::vector<std::size_t> out;
  for (const std::string& part : split(trim(value), ',')) {
    const std::uint64_t w = parse_u64(part, "hidden");
    if (w == 0) throw config_error("hidden layer width must be positive");
    out.push_back(static_cast<std::size_t>(w));
  }
  return out;
}

// ---- CSV plumbing -----------------------------------------------------------------

std::string csv_stem(const RunConfig& cfg) {
  return cfg.experiment + "_" + cfg.algorithm;
}

void write_aggregate(const std::string& path,
                     const std::vector<std::vector<MetricRow>>& rows_by_seed) {
  // (metric, step) -> values across seeds, in deterministic sorted order.
  std::map<std::string, std::map<std::uint64_t, std::vector<double>>> cells;
  for (const auto& rows : rows_by_seed)
    for (const MetricRow& r : rows)
      cells[r.metric][r.step].push_back(r.value);

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw config_error("cannot write '" + path + "'");
  out << "step,metric,mean,std,n\n";
  for (const auto& [metric, by_step] : cells) {
    for (const auto& [step, values] : by_step) {
      const std::size_t n = values.size();
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
      out << step << ',' << metric << ',' << fmt_g(mean) << ',' << fmt_g(sd)
          << ',' << n << '\n';
    }
  }
}

}  // namespace

// ---- Public API ---------------------------------------------------------------------

const std::vector<ExperimentInfo>& experiment_registry() {
  static const std::vector<ExperimentInfo> info = [] {
    std::vector<ExperimentInfo> out;
    for (const ExperimentSpec& e : registry_impl()) {
      ExperimentInfo i;
      i.id = e.id;
      for (const AlgoSpec& a : e.algos) i.algorithms.push_back(a.id);
      i.description = e.description;
      out.push_back(std::move(i));
    }
    return out;
  }();
  return info;
}

std::map<std::string, double> default_params(const std::string& experiment,
                                             const std::string& algorithm) {
  const ExperimentSpec& exp = find_experiment(experiment);
  return find_algo(exp, algorithm).params;
}

std::string render_experiment_list() {
  std::ostringstream out;
  for (const ExperimentSpec& e : registry_impl()) {
    out << e.id << " — " << e.description << "\n";
    for (const AlgoSpec& a : e.algos) {
      out << "  " << a.id;
      if (&a == &e.algos.front()) out << " (default)";
      out << ":";
      for (const auto& [k, v] : a.params) out << ' ' << k << '=' << fmt_short(v);
      out << "\n";
    }
    if (e.has_hidden) {
      out << "  hidden =";
      for (std::size_t w : e.hidden_default) out << ' ' << w;
      out << " (layer widths, comma list)\n";
    }
  }
  return out.str();
}

RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(lineno) +
                         ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("line " + std::to_string(lineno) +
                                        ": empty key");
    if (!kv.emplace(key, value).second)
      throw config_error("duplicate key '" + key + "'");
  }

  const auto take = [&kv](const char* key) {
    std::string out;
    const auto it = kv.find(key);
    if (it != kv.end()) {
      out = it->second;
      kv.erase(it);
    }
    return out;
  };

  RunConfig cfg;
  cfg.experiment = take("experiment");
  if (cfg.experiment.empty())
    throw config_error("missing required key 'experiment'");
  const ExperimentSpec& exp = find_experiment(cfg.experiment);

  cfg.algorithm = take("algorithm");
  if (cfg.algorithm.empty()) cfg.algorithm = exp.algos.front().id;
  const AlgoSpec& algo = find_algo(exp, cfg.algorithm);

  const std::string seeds = take("seeds");
  if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);

  const std::string out_dir = take("out");
  if (!out_dir.empty()) cfg.out_dir = out_dir;

  const std::string hidden = take("hidden");
  if (!hidden.empty()) {
    if (!exp.has_hidden)
      throw config_error("experiment '" + exp.id +
                         "' does not take a 'hidden' layer list");
    cfg.hidden = parse_hidden(hidden);
  }

  cfg.params = algo.params;
  for (const auto& [key, value] : kv) {
    const auto it = cfg.params.find(key);
    if (it == cfg.params.end())
      throw config_error("unknown key '" + key + "' for experiment '" +
                         exp.id + "', algorithm '" + algo.id + "'");
    it->second = parse_number(value, "key '" + key + "'");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::vector<MetricRow> run_experiment_seed(const RunConfig& cfg,
                                           std::uint64_t seed) {
  std::vector<MetricRow> rows;
  dispatch_seed(cfg, seed, [&rows](const MetricRow& r) { rows.push_back(r); });
  return rows;
}

bool RunResult::ok() const {
  for (const SeedOutcome& s : seeds)
    if (!s.ok) return false;
  return !seeds.empty();
}

RunResult run(const RunConfig& cfg, std::size_t jobs) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw config_error("cannot create output directory '" + cfg.out_dir +
                             "': " + ec.message());

  const std::size_t n = cfg.seeds.size();
  RunResult result;
  result.seeds.resize(n);
  std::vector<std::vector<MetricRow>> rows_by_seed(n);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const std::uint64_t seed = cfg.seeds[i];
      SeedOutcome& out = result.seeds[i];
      out.seed = seed;
      const std::string path = cfg.out_dir + "/" + csv_stem(cfg) + "_seed" +
                               std::to_string(seed) + ".csv";
      try {
        std::ofstream file(path, std::ios::trunc);
        if (!file) throw config_error("cannot write '" + path + "'");
        file << "seed,step,metric,value\n";
        std::vector<MetricRow>& rows = rows_by_seed[i];
        dispatch_seed(cfg, seed, [&](const MetricRow& r) {
          rows.push_back(r);
          file << seed << ',' << r.step << ',' << r.metric << ','
               << fmt_g(r.value) << '\n';
          file.flush();  // long runs are monitored while in flight
        });
        if (!file) throw config_error("write failure on '" + path + "'");
        out.ok = true;
        out.csv_path = path;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
        rows_by_seed[i].clear();
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<std::vector<MetricRow>> ok_rows;
  for (std::size_t i = 0; i < n; ++i)
    if (result.seeds[i].ok) ok_rows.push_back(std::move(rows_by_seed[i]));
  result.aggregate_path = cfg.out_dir + "/" + csv_stem(cfg) + "_aggregate.csv";
  write_aggregate(result.aggregate_path, ok_rows);
  return result;
}

MetricTable load_metric_csvs(const std::vector<std::string>& paths) {
  MetricTable table;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open metrics file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || trim(line) != "seed,step,metric,value")
      throw config_error("'" + path + "' is not a metrics CSV (bad header)");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const std::vector<std::string> parts = split(line, ',');
      if (parts.size() != 4)
        throw config_error("'" + path + "' line " + std::to_string(lineno) +
                           ": expected 4 columns");
      const std::uint64_t seed = parse_u64(parts[0], "seed column");
      const std::uint64_t step = parse_u64(parts[1], "step column");
      const std::string metric = trim(parts[2]);
      const double value = parse_number(parts[3], "value column");
      table[metric][seed].emplace_back(step, value);
    }
  }
  for (auto& [metric, by_seed] : table)
    for (auto& [seed, series] : by_seed)
      std::stable_sort(series.begin(), series.end(),
                       [](const auto& a, const auto& b) {
                         return a.first < b.first;
                       });
  return table;
}

// ---- Compare ------------------------------------------------------------------------

namespace {

enum class ReduceFn { final_value, max_value, min_value, ratio_final_peak };
enum class CmpOp { lt, le, gt, ge };

struct Assertion {
  std::string text;
  ReduceFn fn = ReduceFn::final_value;
  std::string metric;
  CmpOp op = CmpOp::lt;
  double threshold = 0.0;
  bool has_quota = false;
  std::size_t quota_k = 0, quota_n = 0;
};

double reduce_series(ReduceFn fn,
                     const std::vector<std::pair<std::uint64_t, double>>& s) {
  double mx = s.front().second, mn = s.front().second;
  for (const auto& [step, v] : s) {
    mx = std::max(mx, v);
    mn = std::min(mn, v);
  }
  switch (fn) {
    case ReduceFn::final_value: return s.back().second;
    case ReduceFn::max_value: return mx;
    case ReduceFn::min_value: return mn;
    case ReduceFn::ratio_final_peak:
      return mx == 0.0 ? 0.0 : s.back().second / mx;
  }
  return 0.0;
}

bool apply_op(CmpOp op, double x, double threshold) {
  switch (op) {
    case CmpOp::lt: return x < threshold;
    case CmpOp::le: return x <= threshold;
    case CmpOp::gt: return x > threshold;
    case CmpOp::ge: return x >= threshold;
  }
  return false;
}

Assertion parse_assertion(const std::string& rhs, const std::string& line) {
  Assertion a;
  a.text = trim(rhs);
  std::string s = a.text;

  const std::size_t open = s.find('(');
  const std::size_t close = s.find(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw config_error("bad assertion '" + line + "': expected func(metric)");
  const std::string fn = trim(s.substr(0, open));
  if (fn == "final") a.fn = ReduceFn::final_value;
  else if (fn == "max") a.fn = ReduceFn::max_value;
  else if (fn == "min") a.fn = ReduceFn::min_value;
  else if (fn == "ratio_final_peak") a.fn = ReduceFn::ratio_final_peak;
  else throw config_error("unknown function '" + fn + "' in '" + line + "'");
  a.metric = trim(s.substr(open + 1, close - open - 1));
  if (a.metric.empty())
    throw config_error("empty metric name in '" + line + "'");

  s = trim(s.substr(close + 1));
  if (s.rfind("<=", 0) == 0) { a.op = CmpOp::le; s = s.substr(2); }
  else if (s.rfind(">=", 0) == 0) { a.op = CmpOp::ge; s = s.substr(2); }
  else if (s.rfind("<", 0) == 0) { a.op = CmpOp::lt; s = s.substr(1); }
  else if (s.rfind(">", 0) == 0) { a.op = CmpOp::gt; s = s.substr(1); }
  else throw config_error("expected comparison operator in '" + line + "'");
  s = trim(s);

  std::string quota;
  const std::size_t bracket = s.find('[');
  if (bracket != std::string::npos) {
    quota = trim(s.substr(bracket));
    s = trim(s.substr(0, bracket));
  }
  a.threshold = parse_number(s, "threshold in '" + line + "'");

  if (!quota.empty()) {
    if (quota.front() != '[' || quota.back() != ']')
      throw config_error("bad seed quota in '" + line + "'");
    std::string body = trim(quota.substr(1, quota.size() - 2));
    if (body.rfind("seeds", 0) != 0)
      throw config_error("bad seed quota in '" + line + "'");
    body = trim(body.substr(5));
    const std::size_t slash = body.find('/');
    if (slash == std::string::npos)
      throw config_error("bad seed quota in '" + line + "': expected k/n");
    a.quota_k = parse_u64(body.substr(0, slash), "seed quota");
    a.quota_n = parse_u64(body.substr(slash + 1), "seed quota");
    if (a.quota_n == 0 || a.quota_k > a.quota_n)
      throw config_error("bad seed quota in '" + line + "'");
    a.has_quota = true;
  }
  return a;
}

}  // namespace

std::string CompareReport::render() const {
  std::ostringstream out;
  std::size_t passed = 0;
  for (const CompareCheck& c : checks) {
    out << (c.pass ? "PASS" : "FAIL") << ": " << c.text << " — "
        << c.pass_seeds << "/" << c.total_seeds << " seeds";
    if (!c.detail.empty()) out << " (" << c.detail << ")";
    out << "\n";
    passed += c.pass ? 1 : 0;
  }
  out << "RESULT: " << (pass ? "PASS" : "FAIL") << " (" << passed << "/"
      << checks.size() << " checks)\n";
  return out.str();
}

CompareReport compare(const std::string& criteria_text,
                      const std::vector<std::string>& csv_paths) {
  std::vector<Assertion> assertions;
  std::istringstream in(criteria_text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)) != "assert")
      throw config_error("expected 'assert = ...', got '" + line + "'");
    assertions.push_back(parse_assertion(line.substr(eq + 1), line));
  }

  const MetricTable table = load_metric_csvs(csv_paths);

  CompareReport report;
  for (const Assertion& a : assertions) {
    CompareCheck check;
    check.text = a.text;

    const auto it = table.find(a.metric);
    if (it == table.end() || it->second.empty()) {
      check.pass = false;
      check.detail = "metric '" + a.metric + "' not found in inputs";
      report.checks.push_back(std::move(check));
      report.pass = false;
      continue;
    }

    std::ostringstream detail;
    for (const auto& [seed, series] : it->second) {
      check.total_seeds += 1;
      const double x = reduce_series(a.fn, series);
      const bool ok = apply_op(a.op, x, a.threshold);
      check.pass_seeds += ok ? 1 : 0;
      if (check.total_seeds > 1) detail << ", ";
      detail << "seed " << seed << ": " << fmt_short(x)
             << (ok ? "" : " [fail]");
    }
    check.detail = detail.str();

    if (a.has_quota) {
      if (check.total_seeds != a.quota_n) {
        check.pass = false;
        check.detail = "expected " + std::to_string(a.quota_n) +
                       " seeds, found " + std::to_string(check.total_seeds) +
                       "; " + check.detail;
      } else {
        check.pass = check.pass_seeds >= a.quota_k;
      }
    } else {
      check.pass = check.total_seeds > 0 &&
                   check.pass_seeds == check.total_seeds;
    }
    report.pass = report.pass && check.pass;
    report.checks.push_back(std::move(check));
  }
  return report;
}

CompareReport compare_files(const std::string& criteria_path,
                            const std::vector<std::string>& csv_paths) {
  std::ifstream in(criteria_path);
  if (!in)
    throw config_error("cannot open criteria file '" + criteria_path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return compare(buf.str(), csv_paths);
}

}  // namespace bbo
