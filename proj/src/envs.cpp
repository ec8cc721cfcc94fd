#include "bbo/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bbo {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw numeric_error(msg);
}

std::size_t sample_categorical(const double* p, std::size_t n, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return n - 1;
}

double clip(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

double segment_distance(double px, double py, double ax, double ay, double bx,
                        double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = clip(t, 0.0, 1.0);
  const double cx = ax + t * dx, cy = ay + t * dy;
  return std::hypot(px - cx, py - cy);
}

}  // namespace

Vec FeatureMap::features(std::size_t state) const {
  require(state < table.rows, "feature map: state index out of range");
  Vec out(table.cols);
  for (std::size_t j = 0; j < table.cols; ++j) out[j] = table.at(state, j);
  return out;
}

FeatureMap onehot_features(std::size_t n_states) {
  FeatureMap fm;
  fm.kind = FeatureMap::Kind::tabular_onehot;
  fm.table = Matrix::identity(n_states);
  return fm;
}

FeatureMap rbf_grid_features(std::size_t n_states, double lo, double hi,
                             std::size_t n_centers, double width) {
  require(n_states >= 2 && n_centers >= 1 && width > 0.0,
          "rbf grid: bad arguments");
  FeatureMap fm;
  fm.kind = FeatureMap::Kind::rbf_grid;
  fm.table = Matrix(n_states, n_centers);
  for (std::size_t s = 0; s < n_states; ++s) {
    const double x =
        lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(n_states - 1);
    for (std::size_t j = 0; j < n_centers; ++j) {
      const double c =
          n_centers == 1
              ? 0.5 * (lo + hi)
              : lo + (hi - lo) * static_cast<double>(j) /
                         static_cast<double>(n_centers - 1);
      const double z = (x - c) / width;
      fm.table.at(s, j) = std::exp(-0.5 * z * z);
    }
  }
  return fm;
}

// ---- Three-state counterexample --------------------------------------------

TabularMdp triangle_mdp() {
  TabularMdp mdp;
  mdp.n_states = 3;
  mdp.n_actions = 1;
  Matrix p(3, 3);
  p.at(0, 0) = 0.5; p.at(0, 2) = 0.5;
  p.at(1, 0) = 0.5; p.at(1, 1) = 0.5;
  p.at(2, 1) = 0.5; p.at(2, 2) = 0.5;
  mdp.P = {p};
  mdp.R = Matrix(3, 1);
  mdp.gamma = 0.9;
  mdp.initial_dist = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  mdp.terminal = {false, false, false};
  return mdp;
}

namespace {
constexpr double kSpiralA[3] = {-14.9996, -35.0002, 50.0004};
constexpr double kSpiralB[3] = {-49.0753, 37.5278, 11.5469};
constexpr double kSpiralEps = 1e-2;
const double kSpiralLambda = std::sqrt(3.0) / 2.0;
}  // namespace

Vec triangle_value(double omega) {
  const double g = std::exp(kSpiralEps * omega);
  const double c = std::cos(kSpiralLambda * omega);
  const double s = std::sin(kSpiralLambda * omega);
  Vec v(3);
  for (int i = 0; i < 3; ++i) v[i] = g * (kSpiralA[i] * c - kSpiralB[i] * s);
  return v;
}

Vec triangle_value_deriv(double omega) {
  const double g = std::exp(kSpiralEps * omega);
  const double c = std::cos(kSpiralLambda * omega);
  const double s = std::sin(kSpiralLambda * omega);
  Vec d(3);
  for (int i = 0; i < 3; ++i) {
    d[i] = kSpiralEps * g * (kSpiralA[i] * c - kSpiralB[i] * s) +
           g * kSpiralLambda * (-kSpiralA[i] * s - kSpiralB[i] * c);
  }
  return d;
}

// ---- Two-hop descent chain ---------------------------------------------------

std::pair<TabularMdp, FeatureMap> boyan_chain() {
  const std::size_t n = 14;
  TabularMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 1;
  Matrix p(n, n);
  mdp.R = Matrix(n, 1);
  p.at(0, 0) = 1.0;  // absorbing, zero reward
  p.at(1, 0) = 1.0;
  mdp.R.at(1, 0) = -2.0;
  for (std::size_t s = 2; s < n; ++s) {
    p.at(s, s - 1) = 0.5;
    p.at(s, s - 2) = 0.5;
    mdp.R.at(s, 0) = -3.0;
  }
  mdp.P = {p};
  mdp.gamma = 0.95;
  mdp.initial_dist = Vec(n, 0.0);
  mdp.initial_dist[n - 1] = 1.0;
  mdp.terminal.assign(n, false);
  mdp.terminal[0] = true;

  FeatureMap fm;
  fm.kind = FeatureMap::Kind::boyan_interp;
  fm.table = Matrix(n, 4);
  const double anchors[4] = {12.0, 8.0, 4.0, 0.0};
  for (std::size_t s = 0; s <= 12; ++s) {
    for (std::size_t j = 0; j < 4; ++j) {
      fm.table.at(s, j) =
          std::max(0.0, 1.0 - std::abs(static_cast<double>(s) - anchors[j]) / 4.0);
    }
  }
  // State 13 extends the [8, 12] interpolation segment linearly so any value
  // function linear in the state index stays exactly representable.
  fm.table.at(13, 0) = 1.25;
  fm.table.at(13, 1) = -0.25;
  return {mdp, fm};
}

// ---- Dense random MDP ---------------------------------------------------------

std::pair<TabularMdp, FeatureMap> random_mdp(std::size_t n_states,
                                             std::size_t n_features,
                                             std::uint64_t seed) {
  require(n_states >= 2 && n_features >= 2, "random mdp: bad sizes");
  Rng rng(seed);
  TabularMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = 2;
  mdp.R = Matrix(n_states, 2);
  for (std::size_t a = 0; a < 2; ++a) {
    Matrix p(n_states, n_states);
    for (std::size_t s = 0; s < n_states; ++s) {
      // Dirichlet(1) row via normalized exponentials.
      double total = 0.0;
      for (std::size_t t = 0; t < n_states; ++t) {
        const double e = -std::log(1.0 - rng.uniform());
        p.at(s, t) = e;
        total += e;
      }
      for (std::size_t t = 0; t < n_states; ++t) p.at(s, t) /= total;
      mdp.R.at(s, a) = rng.uniform();
    }
    mdp.P.push_back(std::move(p));
  }
  mdp.gamma = 0.99;
  mdp.initial_dist.assign(n_states, 1.0 / static_cast<double>(n_states));
  mdp.terminal.assign(n_states, false);

  FeatureMap fm;
  fm.kind = FeatureMap::Kind::random_projection;
  fm.table = Matrix(n_states, n_features);
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t j = 0; j + 1 < n_features; ++j) fm.table.at(s, j) = rng.uniform();
    fm.table.at(s, n_features - 1) = 1.0;
  }
  return {mdp, fm};
}

TabularPolicy uniform_policy(const TabularMdp& mdp) {
  Matrix pi(mdp.n_states, mdp.n_actions);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a)
      pi.at(s, a) = 1.0 / static_cast<double>(mdp.n_actions);
  return pi;
}

TabularPolicy shifted_policy(const TabularMdp& mdp, double delta) {
  require(mdp.n_actions == 2, "shifted policy needs exactly two actions");
  require(std::abs(delta) < 0.5, "shifted policy: |delta| must be < 0.5");
  Matrix pi(mdp.n_states, 2);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    pi.at(s, 0) = 0.5 + delta;
    pi.at(s, 1) = 0.5 - delta;
  }
  return pi;
}

// ---- Mountain car --------------------------------------------------------------

Vec MountainCarEnv::reset(Rng&) {
  pos_ = -0.5;
  vel_ = 0.0;
  return observe();
}

Vec MountainCarEnv::reset_uniform(Rng& rng) {
  pos_ = rng.uniform(kMinPos, kMaxPos);
  vel_ = rng.uniform(-kMaxSpeed, kMaxSpeed);
  return observe();
}

void MountainCarEnv::set_raw_state(const Vec& state) {
  require(state.size() == 2, "mountain car state is (position, velocity)");
  pos_ = clip(state[0], kMinPos, kMaxPos);
  vel_ = clip(state[1], -kMaxSpeed, kMaxSpeed);
}

Vec MountainCarEnv::observe() const {
  return {2.0 * (pos_ - kMinPos) / (kMaxPos - kMinPos) - 1.0, vel_ / kMaxSpeed};
}

EnvStep MountainCarEnv::step(const Vec& action, Rng&) {
  require(action.size() == 1, "mountain car takes a scalar action");
  double a = action[0];
  if (a < -1.0 || a > 1.0) {
    ++clip_count_;
    a = clip(a, -1.0, 1.0);
  }
  vel_ += a * kPower - 0.0025 * std::cos(3.0 * pos_);
  vel_ = clip(vel_, -kMaxSpeed, kMaxSpeed);
  pos_ += vel_;
  pos_ = clip(pos_, kMinPos, kMaxPos);
  if (pos_ <= kMinPos && vel_ < 0.0) vel_ = 0.0;
  const bool done = pos_ >= kGoalPos;
  EnvStep out;
  out.obs = observe();
  out.reward = -0.1 * a * a + (done ? 100.0 : 0.0);
  out.done = done;
  return out;
}

// ---- Puddle world ---------------------------------------------------------------

double PuddleWorldEnv::puddle_depth(double x, double y) {
  constexpr double kRadius = 0.1;
  const double d1 = segment_distance(x, y, 0.10, 0.75, 0.45, 0.75);
  const double d2 = segment_distance(x, y, 0.45, 0.40, 0.45, 0.80);
  return std::max(0.0, kRadius - d1) + std::max(0.0, kRadius - d2);
}

Vec PuddleWorldEnv::reset(Rng& rng) {
  do {
    x_ = rng.uniform();
    y_ = rng.uniform();
  } while (x_ + y_ >= 1.9);
  return observe();
}

Vec PuddleWorldEnv::reset_uniform(Rng& rng) { return reset(rng); }

void PuddleWorldEnv::set_raw_state(const Vec& state) {
  require(state.size() == 2, "puddle world state is (x, y)");
  x_ = clip(state[0], 0.0, 1.0);
  y_ = clip(state[1], 0.0, 1.0);
}

Vec PuddleWorldEnv::observe() const { return {2.0 * x_ - 1.0, 2.0 * y_ - 1.0}; }

EnvStep PuddleWorldEnv::step(const Vec& action, Rng& rng) {
  require(action.size() == 1, "puddle world takes one action index");
  const long idx = std::lround(action[0]);
  require(idx >= 0 && idx < 4, "puddle world action index must be in 0..3");
  constexpr double kStep = 0.05, kNoise = 0.01;
  double dx = 0.0, dy = 0.0;
  switch (idx) {
    case 0: dy = kStep; break;   // up
    case 1: dy = -kStep; break;  // down
    case 2: dx = -kStep; break;  // left
    case 3: dx = kStep; break;   // right
  }
  x_ = clip(x_ + dx + kNoise * rng.normal(), 0.0, 1.0);
  y_ = clip(y_ + dy + kNoise * rng.normal(), 0.0, 1.0);
  EnvStep out;
  out.obs = observe();
  out.reward = -1.0 - 400.0 * puddle_depth(x_, y_);
  out.done = (x_ + y_ >= 1.9);
  return out;
}

ContinuousPolicy mountain_car_pe_policy() {
  return [](const Vec& obs, Rng&) -> Vec { return {obs[1] > 0.0 ? 1.0 : -1.0}; };
}

ContinuousPolicy puddle_up_down_policy() {
  return [](const Vec&, Rng& rng) -> Vec {
    return {static_cast<double>(rng.uniform_int(2))};  // 0 = up, 1 = down
  };
}

FeaturizedTransition featurize(const Transition& t, const FeatureMap& fm) {
  require(t.s.size() == 1 && t.s_next.size() == 1,
          "featurize expects tabular (index-encoded) transitions");
  FeaturizedTransition out;
  out.v = fm.features(static_cast<std::size_t>(t.s[0]));
  out.r = t.r;
  out.v_next = t.done ? Vec(fm.dim(), 0.0)
                      : fm.features(static_cast<std::size_t>(t.s_next[0]));
  out.weight = t.weight;
  return out;
}

// ---- Dataset generation -----------------------------------------------------------

Dataset generate_dataset(const TabularMdp& mdp, const TabularPolicy& policy,
                         std::size_t n, SamplingMode mode, Rng& rng,
                         const TabularPolicy* behaviour) {
  require(policy.rows == mdp.n_states && policy.cols == mdp.n_actions,
          "policy shape mismatch");
  if (behaviour)
    require(behaviour->rows == mdp.n_states && behaviour->cols == mdp.n_actions,
            "behaviour policy shape mismatch");
  Dataset ds;
  ds.mode = mode;
  ds.transitions.reserve(n);

  std::size_t s = sample_categorical(mdp.initial_dist.data(), mdp.n_states, rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == SamplingMode::iid_reset) {
      s = rng.uniform_int(mdp.n_states);
    }
    const TabularPolicy& act_from = behaviour ? *behaviour : policy;
    const std::size_t a =
        sample_categorical(act_from.data.data() + s * act_from.cols, mdp.n_actions, rng);
    const std::size_t s2 = sample_categorical(mdp.P[a].data.data() + s * mdp.n_states, mdp.n_states, rng);
    const std::size_t a2 = sample_categorical(policy.data.data() + s2 * policy.cols, mdp.n_actions, rng);

    Transition t;
    t.s = {static_cast<double>(s)};
    t.a = {static_cast<double>(a)};
    t.r = mdp.R.at(s, a);
    t.s_next = {static_cast<double>(s2)};
    t.a_next = Vec{static_cast<double>(a2)};
    t.done = mdp.terminal[s2];
    t.weight = behaviour ? policy.at(s, a) / behaviour->at(s, a) : 1.0;
    ds.transitions.push_back(std::move(t));

    if (mode == SamplingMode::trajectory) {
      s = mdp.terminal[s2]
              ? sample_categorical(mdp.initial_dist.data(), mdp.n_states, rng)
              : s2;
    }
  }
  return ds;
}

Dataset generate_dataset(ContinuousEnv& env, const ContinuousPolicy& policy,
                         std::size_t n, SamplingMode mode, Rng& rng) {
  Dataset ds;
  ds.mode = mode;
  ds.transitions.reserve(n);

  Vec obs = env.reset(rng);
  std::size_t steps_in_episode = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == SamplingMode::iid_reset) {
      obs = env.reset_uniform(rng);
    }
    const Vec a = policy(obs, rng);
    const EnvStep st = env.step(a, rng);
    Transition t;
    t.s = obs;
    t.a = a;
    t.r = st.reward;
    t.s_next = st.obs;
    t.a_next = policy(st.obs, rng);
    t.done = st.done;
    ds.transitions.push_back(std::move(t));

    if (mode == SamplingMode::trajectory) {
      ++steps_in_episode;
      if (st.done || steps_in_episode >= env.horizon()) {
        obs = env.reset(rng);
        steps_in_episode = 0;
      } else {
        obs = st.obs;
      }
    }
  }
  return ds;
}

// ---- Ground-truth oracles -----------------------------------------------------------

Vec exact_tabular_values(const TabularMdp& mdp, const TabularPolicy& policy) {
  const std::size_t n = mdp.n_states;
  Matrix a(n, n);
  Vec r_pi(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t act = 0; act < mdp.n_actions; ++act) {
      const double pi_sa = policy.at(s, act);
      if (pi_sa == 0.0) continue;
      r_pi[s] += pi_sa * mdp.R.at(s, act);
      for (std::size_t t = 0; t < n; ++t)
        a.at(s, t) -= mdp.gamma * pi_sa * mdp.P[act].at(s, t);
    }
    a.at(s, s) += 1.0;
  }
  return solve_dense(a, r_pi);
}

namespace {

ValueEstimate summarize(const Vec& returns) {
  const double n = static_cast<double>(returns.size());
  double mean = 0.0;
  for (double g : returns) mean += g;
  mean /= n;
  double var = 0.0;
  for (double g : returns) var += (g - mean) * (g - mean);
  var = returns.size() > 1 ? var / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

std::vector<ValueEstimate> mc_values(const TabularMdp& mdp,
                                     const TabularPolicy& policy,
                                     const std::vector<std::size_t>& probes,
                                     std::size_t n_rollouts, std::size_t horizon,
                                     Rng& rng) {
  std::vector<ValueEstimate> out;
  out.reserve(probes.size());
  for (std::size_t probe : probes) {
    Vec returns(n_rollouts);
    for (std::size_t k = 0; k < n_rollouts; ++k) {
      std::size_t s = probe;
      double g = 0.0, disc = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        if (mdp.terminal[s]) break;
        const std::size_t a = sample_categorical(policy.data.data() + s * policy.cols, mdp.n_actions, rng);
        g += disc * mdp.R.at(s, a);
        disc *= mdp.gamma;
        s = sample_categorical(mdp.P[a].data.data() + s * mdp.n_states, mdp.n_states, rng);
      }
      returns[k] = g;
    }
    out.push_back(summarize(returns));
  }
  return out;
}

std::vector<ValueEstimate> mc_values(ContinuousEnv& env,
                                     const ContinuousPolicy& policy,
                                     const std::vector<Vec>& probe_raw_states,
                                     std::size_t n_rollouts, std::size_t horizon,
                                     double gamma, Rng& rng) {
  std::vector<ValueEstimate> out;
  out.reserve(probe_raw_states.size());
  for (const Vec& probe : probe_raw_states) {
    Vec returns(n_rollouts);
    for (std::size_t k = 0; k < n_rollouts; ++k) {
      env.set_raw_state(probe);
      Vec obs = env.observe();
      double g = 0.0, disc = 1.0;
      for (std::size_t t = 0; t < horizon; ++t) {
        const Vec a = policy(obs, rng);
        const EnvStep st = env.step(a, rng);
        g += disc * st.reward;
        disc *= gamma;
        if (st.done) break;
        obs = st.obs;
      }
      returns[k] = g;
    }
    out.push_back(summarize(returns));
  }
  return out;
}

// ---- CSV I/O -------------------------------------------------------------------------

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream f(path);
  require(f.good(), "cannot open for writing: " + path);
  const std::size_t s_dim = ds.transitions.empty() ? 0 : ds.transitions[0].s.size();
  const std::size_t a_dim = ds.transitions.empty() ? 0 : ds.transitions[0].a.size();
  const bool has_next =
      !ds.transitions.empty() && ds.transitions[0].a_next.has_value();
  f << "s_dim=" << s_dim << ",a_dim=" << a_dim << ",has_a_next=" << (has_next ? 1 : 0)
    << ",mode=" << (ds.mode == SamplingMode::iid_reset ? "iid_reset" : "trajectory")
    << "\n";
  for (std::size_t j = 0; j < s_dim; ++j) f << "s" << j << ",";
  for (std::size_t j = 0; j < a_dim; ++j) f << "a" << j << ",";
  f << "r";
  for (std::size_t j = 0; j < s_dim; ++j) f << ",s_next" << j;
  if (has_next)
    for (std::size_t j = 0; j < a_dim; ++j) f << ",a_next" << j;
  f << ",done,weight\n";

  char buf[32];
  auto put = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    f << buf;
  };
  for (const Transition& t : ds.transitions) {
    require(t.s.size() == s_dim && t.a.size() == a_dim &&
                t.s_next.size() == s_dim && t.a_next.has_value() == has_next,
            "dataset rows have inconsistent dimensions");
    for (double x : t.s) { put(x); f << ","; }
    for (double x : t.a) { put(x); f << ","; }
    put(t.r);
    for (double x : t.s_next) { f << ","; put(x); }
    if (has_next)
      for (double x : *t.a_next) { f << ","; put(x); }
    f << "," << (t.done ? 1 : 0) << ",";
    put(t.weight);
    f << "\n";
  }
  require(f.good(), "write failed: " + path);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_dataset_csv(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open for reading: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), "dataset file is empty: " + path);

  std::size_t s_dim = 0, a_dim = 0;
  bool has_next = false;
  Dataset ds;
  for (const std::string& field : split_csv(line)) {
    const auto eq = field.find('=');
    require(eq != std::string::npos, "malformed dataset header: " + line);
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "s_dim") s_dim = std::stoul(val);
    else if (key == "a_dim") a_dim = std::stoul(val);
    else if (key == "has_a_next") has_next = (val == "1");
    else if (key == "mode")
      ds.mode = (val == "trajectory") ? SamplingMode::trajectory
                                      : SamplingMode::iid_reset;
    else
      throw numeric_error("unknown dataset header key: " + key);
  }
  std::getline(f, line);  // column names

  const std::size_t want = 2 * s_dim + a_dim + (has_next ? a_dim : 0) + 3;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    require(cells.size() == want, "dataset row has wrong column count: " + line);
    std::size_t c = 0;
    Transition t;
    t.s.resize(s_dim);
    for (std::size_t j = 0; j < s_dim; ++j) t.s[j] = std::stod(cells[c++]);
    t.a.resize(a_dim);
    for (std::size_t j = 0; j < a_dim; ++j) t.a[j] = std::stod(cells[c++]);
    t.r = std::stod(cells[c++]);
    t.s_next.resize(s_dim);
    for (std::size_t j = 0; j < s_dim; ++j) t.s_next[j] = std::stod(cells[c++]);
    if (has_next) {
      Vec an(a_dim);
      for (std::size_t j = 0; j < a_dim; ++j) an[j] = std::stod(cells[c++]);
      t.a_next = std::move(an);
    }
    t.done = (std::stod(cells[c++]) != 0.0);
    t.weight = std::stod(cells[c++]);
    ds.transitions.push_back(std::move(t));
  }
  return ds;
}

}  // namespace bbo
