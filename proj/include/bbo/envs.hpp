#pragma once

// Benchmark environments, feature maps, evaluation policies, dataset
// generation and ground-truth value oracles.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bbo/numerics.hpp"

namespace bbo {

// One environment sample. Tabular states are encoded as a 1-entry vector
// holding the state index. `done` marks a transition into a terminal state
// (bootstrapping must stop there); `weight` is the importance ratio
// eval-policy / behaviour-policy for off-policy data, 1 otherwise.
struct Transition {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  std::optional<Vec> a_next;
  bool done = false;
  double weight = 1.0;
};

enum class SamplingMode { iid_reset, trajectory };

struct Dataset {
  std::vector<Transition> transitions;
  SamplingMode mode = SamplingMode::iid_reset;

  std::size_t size() const { return transitions.size(); }
};

// Finite MDP. P holds one row-stochastic n×n matrix per action (size-1 for
// action-independent chains); R is n_states × n_actions expected reward.
struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 1;
  std::vector<Matrix> P;
  Matrix R;
  double gamma = 0.0;
  Vec initial_dist;
  std::vector<bool> terminal;  // absorbing bookkeeping (may be all-false)
};

// Row s = action distribution of the policy in state s.
using TabularPolicy = Matrix;

// State features for linear methods, precomputed as an n_states × dim table.
struct FeatureMap {
  enum class Kind { boyan_interp, tabular_onehot, random_projection, rbf_grid };
  Kind kind = Kind::tabular_onehot;
  Matrix table;

  std::size_t dim() const { return table.cols; }
  Vec features(std::size_t state) const;
};

FeatureMap onehot_features(std::size_t n_states);
// Gaussian bumps on a regular grid over [lo, hi]; dim = centers.
FeatureMap rbf_grid_features(std::size_t n_states, double lo, double hi,
                             std::size_t n_centers, double width);

// ---- Benchmark constructions ----------------------------------------------

// Three-state counterexample chain: action-independent two-successor rows,
// zero rewards (true values identically zero), discount 0.9.
TabularMdp triangle_mdp();

// Spiral value parametrization V̂(ω) = exp(εω)(a·cos(λω) − b·sin(λω)) with
// the fixed three-state coefficient vectors; scalar parameter.
Vec triangle_value(double omega);
Vec triangle_value_deriv(double omega);

// 14-state two-hop descent chain: from state s ≥ 2 hop to s−1 or s−2 with
// probability ½ and reward −3; state 1 steps to the absorbing state 0 with
// reward −2; discount 0.95. Features are 4 interpolating hats anchored
// one-hot at states 12, 8, 4, 0; the start state 13 extends the last
// segment linearly so values linear in the state index stay representable.
std::pair<TabularMdp, FeatureMap> boyan_chain();

// Dense random MDP: 2 actions, Dirichlet(1) transition rows (normalized
// exponentials), rewards U(0,1), features U(0,1) with a trailing constant-1
// column (n_features counts the constant). Deterministic in the seed.
std::pair<TabularMdp, FeatureMap> random_mdp(std::size_t n_states,
                                             std::size_t n_features,
                                             std::uint64_t seed);

TabularPolicy uniform_policy(const TabularMdp& mdp);
// Behaviour policy for off-policy runs: first action probability 0.5+delta.
TabularPolicy shifted_policy(const TabularMdp& mdp, double delta);

// ---- Continuous environments ----------------------------------------------

struct EnvStep {
  Vec obs;
  double reward = 0.0;
  bool done = false;
};

// Episodic continuous-state task. Observations are normalized to [-1, 1];
// raw physical state is reachable for probes and oracles. Episode caps are
// enforced by rollout loops using horizon().
class ContinuousEnv {
 public:
  virtual ~ContinuousEnv() = default;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t act_dim() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual Vec reset(Rng& rng) = 0;          // start-state distribution
  virtual Vec reset_uniform(Rng& rng) = 0;  // uniform over the state space
  virtual EnvStep step(const Vec& action, Rng& rng) = 0;
  virtual Vec raw_state() const = 0;
  virtual void set_raw_state(const Vec& state) = 0;
  virtual Vec observe() const = 0;
};

// Underpowered car in a valley: position ∈ [−1.2, 0.6], velocity ∈ [−0.07,
// 0.07], action ∈ [−1, 1] (clipped, clip count tracked), fixed start at
// (−0.5, 0), +100 on reaching position ≥ 0.45 minus 0.1·a² every step,
// 999-step cap.
class MountainCarEnv : public ContinuousEnv {
 public:
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 1; }
  std::size_t horizon() const override { return 999; }
  Vec reset(Rng& rng) override;
  Vec reset_uniform(Rng& rng) override;
  EnvStep step(const Vec& action, Rng& rng) override;
  Vec raw_state() const override { return {pos_, vel_}; }
  void set_raw_state(const Vec& state) override;
  Vec observe() const override;

  std::uint64_t action_clip_count() const { return clip_count_; }

  static constexpr double kMinPos = -1.2, kMaxPos = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPos = 0.45;
  static constexpr double kPower = 0.0015;

 private:
  double pos_ = -0.5, vel_ = 0.0;
  std::uint64_t clip_count_ = 0;
};

// Unit-square gridworld with two overlapping puddle capsules. Four actions
// (up, down, left, right as index 0..3) move 0.05 with N(0, 0.01²) noise on
// both coordinates; cost −1 per step minus 400 × total puddle depth; the
// episode ends in the upper-right corner region x + y ≥ 1.9. Discount 0.98
// in the evaluation protocol.
class PuddleWorldEnv : public ContinuousEnv {
 public:
  std::size_t obs_dim() const override { return 2; }
  std::size_t act_dim() const override { return 1; }  // discrete index
  std::size_t horizon() const override { return 1000; }
  Vec reset(Rng& rng) override;
  Vec reset_uniform(Rng& rng) override;
  EnvStep step(const Vec& action, Rng& rng) override;
  Vec raw_state() const override { return {x_, y_}; }
  void set_raw_state(const Vec& state) override;
  Vec observe() const override;

  // Total depth-into-puddle at a raw position (sum over both capsules).
  static double puddle_depth(double x, double y);

 private:
  double x_ = 0.0, y_ = 0.0;
};

// Stochastic policy over continuous observations.
using ContinuousPolicy = std::function<Vec(const Vec& obs, Rng& rng)>;

// Bang-bang evaluation policy for the car: +1 when velocity > 0, else −1
// (acts on the normalized observation; sign of the velocity channel).
ContinuousPolicy mountain_car_pe_policy();
// Uniform up-or-down evaluation policy for the puddle world.
ContinuousPolicy puddle_up_down_policy();

// Transition mapped through a state feature table for the linear methods.
// Terminal next-states get a zero next-feature vector so bootstrapped targets
// stop at episode boundaries.
struct FeaturizedTransition {
  Vec v;
  double r = 0.0;
  Vec v_next;
  double weight = 1.0;
};

FeaturizedTransition featurize(const Transition& t, const FeatureMap& fm);

// ---- Dataset generation -----------------------------------------------------

// Tabular sampler. iid_reset draws s uniformly over all states each sample;
// trajectory mode follows the chain from the initial distribution and
// restarts after terminal states. Actions come from `behaviour` when given
// (importance weights = eval/behaviour), else from `policy` with weight 1.
Dataset generate_dataset(const TabularMdp& mdp, const TabularPolicy& policy,
                         std::size_t n, SamplingMode mode, Rng& rng,
                         const TabularPolicy* behaviour = nullptr);

// Continuous sampler; a_next is drawn from the policy at the next state.
Dataset generate_dataset(ContinuousEnv& env, const ContinuousPolicy& policy,
                         std::size_t n, SamplingMode mode, Rng& rng);

// ---- Ground-truth oracles ---------------------------------------------------

// Solves (I − γ P_π) V = r_π exactly.
Vec exact_tabular_values(const TabularMdp& mdp, const TabularPolicy& policy);

struct ValueEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Discounted Monte-Carlo returns from each probe state.
std::vector<ValueEstimate> mc_values(const TabularMdp& mdp,
                                     const TabularPolicy& policy,
                                     const std::vector<std::size_t>& probes,
                                     std::size_t n_rollouts, std::size_t horizon,
                                     Rng& rng);
std::vector<ValueEstimate> mc_values(ContinuousEnv& env,
                                     const ContinuousPolicy& policy,
                                     const std::vector<Vec>& probe_raw_states,
                                     std::size_t n_rollouts, std::size_t horizon,
                                     double gamma, Rng& rng);

// ---- Dataset CSV I/O ---------------------------------------------------------
//
// Line 1 declares dimensions ("s_dim,a_dim,has_a_next"), line 2 the column
// names, then one row per transition.
void save_dataset_csv(const Dataset& ds, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

}  // namespace bbo
