#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "msim/agents.hpp"
#include "msim/metrics.hpp"
#include "msim/sim.hpp"
#include "msim/types.hpp"

namespace msim {

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------
// The investor's fixed action set, one decision per minute:
//   0        Hold (leave the book untouched)
//   1..4     Buy  at floor(mid) - offset, offset in {1,2,3,4} units
//   5..8     Sell at ceil(mid)  + offset
// Cancel-all precedes every placement; order size is always 2 shares.
inline constexpr int kNumActions = 9;
inline constexpr std::int64_t kInvestorSize = 2;

struct ActionSpec {
  Act direction = Act::Hold;
  int offset_index = -1;  // 0..3 for Buy/Sell, -1 for Hold
  std::int64_t size = kInvestorSize;

  Price offset_units() const { return static_cast<Price>(offset_index + 1); }
};

ActionSpec action_spec(int action);        // throws std::out_of_range
int action_index(const ActionSpec& spec);  // inverse of action_spec
// +1 buy, 0 hold, -1 sell
int action_direction(int action);

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------
// Bin layout (fixed): holdings 5, each momentum 5, spread 3, volatility 3,
// each of the six own-history summaries 2. Cash and depth stay single-bin;
// they remain in the continuous StateVector for the belief model and the
// attribution layer but do not split the Q-table.
struct DiscretizationSpec {
  std::array<double, 4> mom1_edges{};
  std::array<double, 4> mom10_edges{};
  std::array<double, 4> mom30_edges{};
  std::array<double, 2> spread_edges{};
  std::array<double, 2> vol_edges{};
  // quote_count, quote_dist, quote_vol, trade_vol, trade_dist, trade_net
  std::array<double, 6> summary_edges{};

  static constexpr std::uint32_t kNumStates = 5u * 5 * 5 * 5 * 3 * 3 * 64;

  // Total function: every StateVector lands in exactly one packed index.
  std::uint32_t discretize(const StateVector& s) const;

  std::uint64_t hash() const;
  void write(std::ostream& os) const;
  static DiscretizationSpec read(std::istream& is);
};

// {<=-6, -5..-1, 0, 1..5, >=6} -> 0..4
int holdings_bin(double holdings);

// Quantile edges estimated from warm-up observations (momenta at
// .2/.4/.6/.8, spread and volatility at thirds, summaries at the median).
// Throws std::invalid_argument on an empty sample.
DiscretizationSpec calibrate_discretization(const std::vector<StateVector>& samples);

// ---------------------------------------------------------------------------
// Q-table
// ---------------------------------------------------------------------------
class QTable {
 public:
  using Row = std::array<double, kNumActions>;

  // Missing entries read as zero.
  double get(std::uint32_t s, int a) const;
  Row get_row(std::uint32_t s) const;
  Row& row(std::uint32_t s);  // inserts a zero row on first touch
  const std::unordered_map<std::uint32_t, Row>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::unordered_map<std::uint32_t, Row> rows_;
};

// ---------------------------------------------------------------------------
// Sub-rationality profiles
// ---------------------------------------------------------------------------
struct Rational {};
struct Bounded {
  double beta = 1.0;  // Boltzmann inverse temperature, >= 0
};
struct Myopic {
  double gamma = 0.0;  // in [0,1]
};
struct Prospect {
  double c = 2.5;      // loss aversion, > 1
  double delta = 0.65; // probability-weighting exponent, in (0,1]
};
struct Optimistic {
  double omega = 1.0;  // > 0
};
struct Pessimistic {
  double omega = -1.0;  // < 0
};

using SubrationalityProfile =
    std::variant<Rational, Bounded, Myopic, Prospect, Optimistic, Pessimistic>;

// Throws std::invalid_argument naming the offending parameter.
void validate(const SubrationalityProfile& profile);
// Canonical compact form: "rational", "bounded:1", "prospect:2.5:0.65", ...
// Round-trips through parse_profile exactly.
std::string profile_label(const SubrationalityProfile& profile);
SubrationalityProfile parse_profile(const std::string& text);
// Myopic substitutes its own discount factor; everyone else trains/plans with
// the rational one.
double profile_gamma(const SubrationalityProfile& profile, double rational_gamma);

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------
// Softmax over beta*Q with max-subtraction. beta < 0 throws.
std::vector<double> boltzmann_policy(const std::vector<double>& qrow, double beta);
std::array<double, kNumActions> boltzmann_policy(const QTable& q, std::uint32_t s,
                                                 double beta);

// log(1+|r|) for gains, 0 at 0, -c*log(1+|r|) for losses. c <= 1 throws.
double prospect_utility(double r, double c);

// w(p) = p^delta / (p^delta + (1-p)^delta)^(1/delta). Throws on p outside
// [0,1] or delta outside (0,1].
double probability_weight(double p, double delta);

// P^o(s') propto P(s')*exp(omega*G(s')), max-subtracted. Throws on empty or
// mismatched inputs.
std::vector<double> optimism_reweight(const std::vector<double>& probs,
                                      const std::vector<double>& returns, double omega);

double exponential_discount(double r, double gamma, double t);
double hyperbolic_discount(double r, double k, double t);

// Lowest index wins ties.
int greedy_action(const std::array<double, kNumActions>& qrow);
int greedy_policy(const QTable& q, std::uint32_t s);

inline Money step_reward(Money pv_now, Money pv_prev) { return pv_now - pv_prev; }

// One tabular backup: Q(s,a) += alpha * (r~ + gamma_eff * max_a' Q(s',a') - Q(s,a)).
// Prospect transforms the reward through its utility; Myopic substitutes its
// own gamma; terminal transitions take V(s') = 0.
void q_update(QTable& q, std::uint32_t s, int a, double r, std::uint32_t s_next,
              bool terminal, double alpha, const SubrationalityProfile& profile,
              double rational_gamma);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
struct TrainConfig {
  int episodes = 2000;
  double alpha = 0.1;
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.8;  // of episodes spent decaying
  std::uint64_t seed = 1;
};

double epsilon_at(const TrainConfig& cfg, int episode);

struct TrainManifest {
  std::uint64_t config_hash = 0;
  int episodes = 0;
  std::uint64_t seed = 0;
  double gamma = 0.99;
};

struct PolicyArtifact {
  QTable q;
  SubrationalityProfile profile = Rational{};
  DiscretizationSpec disc;
  TrainManifest manifest;

  void save(const std::string& path) const;
  // Verifies the embedded discretization hash; throws std::runtime_error on
  // any mismatch or malformed input.
  static PolicyArtifact load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Acting
// ---------------------------------------------------------------------------
class InvestorBrain {
 public:
  virtual ~InvestorBrain() = default;
  virtual int act(const StateVector& s, std::uint32_t s_disc, std::mt19937_64& rng) = 0;
  virtual void observe(std::uint32_t /*s*/, int /*a*/, double /*r*/,
                       std::uint32_t /*s_next*/, bool /*terminal*/) {}
};

class QLearnerBrain : public InvestorBrain {
 public:
  QLearnerBrain(QTable& q, const TrainConfig& cfg, SubrationalityProfile profile)
      : q_(q), cfg_(cfg), profile_(std::move(profile)) {}
  void set_epsilon(double eps) { epsilon_ = eps; }
  int act(const StateVector& s, std::uint32_t s_disc, std::mt19937_64& rng) override;
  void observe(std::uint32_t s, int a, double r, std::uint32_t s_next,
               bool terminal) override;

 private:
  QTable& q_;
  TrainConfig cfg_;
  SubrationalityProfile profile_;
  double epsilon_ = 1.0;
};

class GreedyBrain : public InvestorBrain {
 public:
  explicit GreedyBrain(const QTable& q) : q_(q) {}
  int act(const StateVector&, std::uint32_t s_disc, std::mt19937_64&) override {
    return greedy_policy(q_, s_disc);
  }

 private:
  const QTable& q_;
};

class BoltzmannBrain : public InvestorBrain {
 public:
  BoltzmannBrain(const QTable& q, double beta);
  int act(const StateVector&, std::uint32_t s_disc, std::mt19937_64& rng) override;

 private:
  const QTable& q_;
  double beta_;
};

class RandomBrain : public InvestorBrain {
 public:
  int act(const StateVector&, std::uint32_t, std::mt19937_64& rng) override {
    return std::uniform_int_distribution<int>(0, kNumActions - 1)(rng);
  }
};

// Plays back a fixed action sequence (model-fidelity comparisons, tests).
class ReplayBrain : public InvestorBrain {
 public:
  explicit ReplayBrain(std::vector<int> actions) : actions_(std::move(actions)) {}
  int act(const StateVector&, std::uint32_t, std::mt19937_64&) override {
    return actions_.at(next_++);
  }

 private:
  std::vector<int> actions_;
  std::size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// The investor inside the market
// ---------------------------------------------------------------------------
// Full minute-level record of one investor-day. states/disc/marks have T+1
// entries (one per wakeup plus the close), actions and rewards have T.
// Sum of rewards telescopes to final_pv - initial_pv exactly.
struct InvestorTrajectory {
  std::vector<StateVector> states;
  std::vector<std::uint32_t> disc;
  std::vector<double> marks;  // last traded price at each observation
  std::vector<int> actions;
  std::vector<Money> rewards;
  Money initial_pv = 0;
  Money final_pv = 0;
};

// Wakes every minute: observes, hands the previous transition to its brain,
// acts, and reschedules itself. The brain is borrowed, not owned, so one
// learner can persist across many simulated days.
class InvestorAgent : public Agent {
 public:
  InvestorAgent(std::string name, InvestorBrain* brain, DiscretizationSpec disc);

  void on_wakeup(Simulation& sim) override;
  void on_day_end(Simulation& sim) override;
  void on_fill(Simulation& sim, const Trade& trade, Side my_side,
               std::int64_t my_order_id, double mid_before) override;

  const InvestorTrajectory& trajectory() const { return traj_; }
  Money pnl() const { return traj_.final_pv - traj_.initial_pv; }

 private:
  StateVector observe(Simulation& sim, int minute);
  void execute(Simulation& sim, int action);

  struct HistRec {
    int minute = 0;
    double dist = 0.0;
    std::int64_t size = 0;
    int sign = 0;  // fills only: +1 buy, -1 sell
  };

  InvestorBrain* brain_;
  DiscretizationSpec disc_;
  InvestorTrajectory traj_;
  std::deque<HistRec> quotes_;
  std::deque<HistRec> fills_;
  double spread_cf_ = 0.0;
  double depth_cf_ = 0.0;
  bool have_prev_ = false;
  Money prev_pv_ = 0;
};

// Runs one simulated day with `brain` driving the investor; returns whatever
// the environment produced. Supplied by the harness (real markets) or by
// tests (synthetic environments).
using EpisodeRunner =
    std::function<void(int episode, std::uint64_t episode_seed, InvestorBrain& brain)>;

// Epsilon-greedy tabular Q-learning over cfg.episodes days. Bounded trains
// exactly as Rational and only stores beta for acting time; Prospect shapes
// rewards through its utility inside each update. Deterministic per seed.
PolicyArtifact train_online(const EpisodeRunner& run_episode,
                            const DiscretizationSpec& disc, const TrainConfig& cfg,
                            const SubrationalityProfile& profile);

// ---------------------------------------------------------------------------
// Model-based planning
// ---------------------------------------------------------------------------
// Sparse tabular MDP over discretized states, the bridge from the learned
// belief model to biased planning. Successor states absent from `cells` are
// absorbing with zero reward.
struct MdpCell {
  std::vector<std::uint32_t> next;
  std::vector<double> prob;    // sums to 1
  std::vector<double> reward;  // expected one-step reward per successor
};

struct TabularMdp {
  std::unordered_map<std::uint32_t, std::array<MdpCell, kNumActions>> cells;
  std::vector<std::uint32_t> flagged;  // never-visited states given self-loops
};

struct PlanConfig {
  double gamma = 0.99;
  double tol = 1e-9;     // sup-norm value-change tolerance
  int max_sweeps = 100000;
};

struct PlanResult {
  PolicyArtifact artifact;
  int sweeps = 0;
  double residual = 0.0;
};

// Value iteration with profile-transformed backups: Prospect re-weights
// successor probabilities through w(p)/renormalization and transforms rewards;
// Optimistic/Pessimistic exponentially tilt probabilities by the
// current-iterate returns. Throws std::runtime_error (with the residual) if
// the sweep cap is hit before the tolerance.
PlanResult plan_with_model(const TabularMdp& mdp, const DiscretizationSpec& disc,
                           const SubrationalityProfile& profile, const PlanConfig& cfg);

}  // namespace msim
