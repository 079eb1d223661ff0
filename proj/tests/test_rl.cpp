#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "msim/market.hpp"
#include "msim/rl.hpp"

using namespace msim;

namespace {

// Frozen oracle constants, computed independently at high precision.
constexpr double kLn101 = 4.61512051684125945088;
constexpr double kW01 = 0.17871926720611956374;   // w(0.1, 0.65)
constexpr double kW09 = 0.74546800095055165495;   // w(0.9, 0.65)
constexpr double kW005 = 0.12152792662795179431;  // w(0.05, 0.65)
constexpr double kW095 = 0.82388373497044808099;  // w(0.95, 0.65)
constexpr double kSigmoid1 = 0.73105857863000487925;
constexpr double kDiscount390 = 1.98484177993802527877;  // 100 * 0.99^390
constexpr double kOptToy = 1.76159415595576488812;   // 2 e^2 / (1 + e^2)
constexpr double kPessToy = 0.23840584404423511188;  // 2 e^-2 / (1 + e^-2)
constexpr double kProspectSafe = 0.18232155679395462621;    // ln 1.2
constexpr double kProspectGamble = 0.19334160444895568328;  // renorm w * ln 4.5

TabularMdp optimism_toy() {
  // s0 --safe--> s1 (r=1); s0 --gamble--> {s1 r=0, s2 r=2} at 50/50;
  // s1, s2 absorb at zero reward. Same expected immediate reward.
  TabularMdp mdp;
  auto& s0 = mdp.cells[0];
  for (auto& cell : s0) cell = MdpCell{{1}, {1.0}, {1.0}};
  s0[1] = MdpCell{{1, 2}, {0.5, 0.5}, {0.0, 2.0}};
  for (auto& cell : mdp.cells[1]) cell = MdpCell{{1}, {1.0}, {0.0}};
  for (auto& cell : mdp.cells[2]) cell = MdpCell{{2}, {1.0}, {0.0}};
  return mdp;
}

TabularMdp chain_toy() {
  // s0 -> s1 (r=0), s1 -> s2 (r=1), s2 absorbs.
  TabularMdp mdp;
  for (auto& cell : mdp.cells[0]) cell = MdpCell{{1}, {1.0}, {0.0}};
  for (auto& cell : mdp.cells[1]) cell = MdpCell{{2}, {1.0}, {1.0}};
  for (auto& cell : mdp.cells[2]) cell = MdpCell{{2}, {1.0}, {0.0}};
  return mdp;
}

TabularMdp gamble_toy() {
  // action 0: sure 0.2; action 1: 3.5 with p=0.05, else 0. Rational EVs are
  // 0.2 vs 0.175, so only an overweighted rare event flips the choice.
  TabularMdp mdp;
  auto& s0 = mdp.cells[0];
  for (auto& cell : s0) cell = MdpCell{{1}, {1.0}, {0.2}};
  s0[1] = MdpCell{{1, 2}, {0.95, 0.05}, {0.0, 3.5}};
  for (auto& cell : mdp.cells[1]) cell = MdpCell{{1}, {1.0}, {0.0}};
  for (auto& cell : mdp.cells[2]) cell = MdpCell{{2}, {1.0}, {0.0}};
  return mdp;
}

DiscretizationSpec toy_disc() { return DiscretizationSpec{}; }

}  // namespace

TEST_CASE("action table round-trips and maps directions") {
  CHECK(action_spec(0).direction == Act::Hold);
  for (int a = 1; a <= 4; ++a) {
    CHECK(action_spec(a).direction == Act::Buy);
    CHECK(action_spec(a).offset_units() == a);
  }
  for (int a = 5; a <= 8; ++a) {
    CHECK(action_spec(a).direction == Act::Sell);
    CHECK(action_spec(a).offset_units() == a - 4);
  }
  for (int a = 0; a < kNumActions; ++a) {
    CHECK(action_index(action_spec(a)) == a);
    CHECK(action_spec(a).size == 2);
  }
  CHECK(action_direction(0) == 0);
  CHECK(action_direction(2) == 1);
  CHECK(action_direction(6) == -1);
  CHECK_THROWS_AS(action_spec(9), std::out_of_range);
  CHECK_THROWS_AS(action_spec(-1), std::out_of_range);
}

TEST_CASE("holdings bins follow the sign buckets") {
  CHECK(holdings_bin(-100) == 0);
  CHECK(holdings_bin(-6) == 0);
  CHECK(holdings_bin(-5) == 1);
  CHECK(holdings_bin(-1) == 1);
  CHECK(holdings_bin(0) == 2);
  CHECK(holdings_bin(1) == 3);
  CHECK(holdings_bin(5) == 3);
  CHECK(holdings_bin(6) == 4);
  CHECK(holdings_bin(250) == 4);
}

TEST_CASE("discretization is a total function into the packed range") {
  std::vector<StateVector> samples;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 2000; ++i) {
    StateVector s;
    for (int f = 0; f < StateVector::kFeatures; ++f) s.set_feature(f, u(rng));
    samples.push_back(s);
  }
  const DiscretizationSpec spec = calibrate_discretization(samples);
  for (const auto& s : samples) CHECK(spec.discretize(s) < DiscretizationSpec::kNumStates);

  // cash and depth stay single-bin: changing them never moves the state
  StateVector s = samples[0];
  const std::uint32_t before = spec.discretize(s);
  s.cash += 1e9;
  s.depth += 1e9;
  CHECK(spec.discretize(s) == before);
}

TEST_CASE("calibration places quantile edges and rejects empty samples") {
  CHECK_THROWS_AS(calibrate_discretization({}), std::invalid_argument);

  // a uniform grid over [0,1] on every feature puts the mom edges at
  // 0.2/0.4/0.6/0.8 and the spread/vol edges at thirds
  std::vector<StateVector> samples;
  for (int i = 0; i <= 1000; ++i) {
    StateVector s;
    for (int f = 0; f < StateVector::kFeatures; ++f) s.set_feature(f, i / 1000.0);
    samples.push_back(s);
  }
  const DiscretizationSpec spec = calibrate_discretization(samples);
  CHECK(spec.mom1_edges[0] == doctest::Approx(0.2));
  CHECK(spec.mom1_edges[3] == doctest::Approx(0.8));
  CHECK(spec.mom30_edges[1] == doctest::Approx(0.4));
  CHECK(spec.spread_edges[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-2));
  CHECK(spec.vol_edges[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-2));
  CHECK(spec.summary_edges[0] == doctest::Approx(0.5));

  // monotone: walking a feature up never decreases its bin
  StateVector lo, hi;
  lo.mom1 = 0.1;
  hi.mom1 = 0.9;
  CHECK(spec.discretize(lo) < spec.discretize(hi));
}

TEST_CASE("q-table reads missing entries as zero") {
  QTable q;
  CHECK(q.get(123, 4) == 0.0);
  CHECK(q.size() == 0);
  q.row(123)[4] = 2.5;
  CHECK(q.get(123, 4) == 2.5);
  CHECK(q.get(123, 5) == 0.0);
  CHECK(q.size() == 1);
  const QTable::Row row = q.get_row(7);
  for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("profile validation enforces the parameter ranges") {
  CHECK_NOTHROW(validate(Rational{}));
  CHECK_NOTHROW(validate(Bounded{0.0}));
  CHECK_THROWS_AS(validate(Bounded{-0.1}), std::invalid_argument);
  CHECK_NOTHROW(validate(Myopic{0.0}));
  CHECK_NOTHROW(validate(Myopic{1.0}));
  CHECK_THROWS_AS(validate(Myopic{1.2}), std::invalid_argument);
  CHECK_NOTHROW(validate(Prospect{2.5, 0.65}));
  CHECK_THROWS_AS(validate(Prospect{1.0, 0.65}), std::invalid_argument);
  CHECK_THROWS_AS(validate(Prospect{2.5, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(validate(Prospect{2.5, 1.5}), std::invalid_argument);
  CHECK_NOTHROW(validate(Optimistic{0.1}));
  CHECK_THROWS_AS(validate(Optimistic{0.0}), std::invalid_argument);
  CHECK_NOTHROW(validate(Pessimistic{-0.1}));
  CHECK_THROWS_AS(validate(Pessimistic{0.5}), std::invalid_argument);
}

TEST_CASE("profile labels round-trip through the parser") {
  const SubrationalityProfile profiles[] = {
      Rational{},          Bounded{0.0},       Bounded{1.0 / 3.0},
      Myopic{0.1},         Prospect{2.5, 0.65}, Optimistic{1.0},
      Pessimistic{-1.0},
  };
  for (const auto& p : profiles) {
    const SubrationalityProfile back = parse_profile(profile_label(p));
    CHECK(profile_label(back) == profile_label(p));
    CHECK(back.index() == p.index());
  }
  CHECK(profile_label(Prospect{2.5, 0.65}) == "prospect:2.5:0.65");
  CHECK_THROWS_AS(parse_profile("zen"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("bounded"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("bounded:1:2"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("myopic:nope"), std::invalid_argument);
  CHECK_THROWS_AS(parse_profile("bounded:-1"), std::invalid_argument);
}

TEST_CASE("boltzmann policy: limits, oracle point and invariances") {
  const std::vector<double> q = {0.0, std::log(2.0)};
  const auto p = boltzmann_policy(q, 1.0);
  CHECK(p[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(p[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-9));

  const std::vector<double> q9 = {3, 1, 4, 1, 5, 9, 2, 6, 5};
  const auto uniform = boltzmann_policy(q9, 0.0);
  for (double v : uniform) CHECK(v == doctest::Approx(1.0 / 9.0).epsilon(1e-12));

  const auto sharp = boltzmann_policy(q9, 1e3);
  CHECK(sharp[5] >= 1.0 - 1e-6);

  // normalization and shift invariance
  std::vector<double> shifted = q9;
  for (double& v : shifted) v += 123.25;
  const auto a = boltzmann_policy(q9, 0.7);
  const auto b = boltzmann_policy(shifted, 0.7);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    sum += a[i];
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  // increasing beta weakly increases the argmax probability
  double prev = 0.0;
  for (double beta : {0.0, 0.1, 0.5, 1.0, 5.0, 50.0}) {
    const double top = boltzmann_policy(q9, beta)[5];
    CHECK(top >= prev - 1e-12);
    prev = top;
  }
  CHECK_THROWS_AS(boltzmann_policy(q9, -0.5), std::invalid_argument);

  // safe at extreme magnitudes
  const auto big = boltzmann_policy({1e6, -1e6}, 10.0);
  CHECK(big[0] == doctest::Approx(1.0));
}

TEST_CASE("prospect utility matches the oracle and its asymmetry law") {
  CHECK(prospect_utility(0.0, 2.5) == 0.0);
  CHECK(prospect_utility(100.0, 2.5) == doctest::Approx(kLn101).epsilon(1e-9));
  CHECK(prospect_utility(-100.0, 2.5) == doctest::Approx(-2.5 * kLn101).epsilon(1e-9));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> r(0.01, 500.0);
  for (int i = 0; i < 100; ++i) {
    const double x = r(rng);
    const double c = 1.0 + r(rng) / 100.0;
    CHECK(std::abs(prospect_utility(-x, c)) ==
          doctest::Approx(c * prospect_utility(x, c)).epsilon(1e-12));
  }
  // strictly increasing, concave on gains
  CHECK(prospect_utility(5.0, 2.5) > prospect_utility(4.99, 2.5));
  CHECK(prospect_utility(-4.99, 2.5) > prospect_utility(-5.0, 2.5));
  const double mid = prospect_utility(50.0, 2.5);
  CHECK(mid > 0.5 * (prospect_utility(25.0, 2.5) + prospect_utility(75.0, 2.5)));
  CHECK_THROWS_AS(prospect_utility(1.0, 1.0), std::invalid_argument);
}

TEST_CASE("probability weighting: boundaries, identity, oracle, crossing") {
  CHECK(probability_weight(0.0, 0.65) == 0.0);
  CHECK(probability_weight(1.0, 0.65) == 1.0);
  for (double p : {0.05, 0.3, 0.7, 0.95})
    CHECK(probability_weight(p, 1.0) == doctest::Approx(p).epsilon(1e-12));
  CHECK(probability_weight(0.1, 0.65) == doctest::Approx(kW01).epsilon(1e-9));
  CHECK(probability_weight(0.9, 0.65) == doctest::Approx(kW09).epsilon(1e-9));
  CHECK(probability_weight(0.05, 0.65) == doctest::Approx(kW005).epsilon(1e-9));
  CHECK(probability_weight(0.95, 0.65) == doctest::Approx(kW095).epsilon(1e-9));
  CHECK(probability_weight(0.1, 0.65) > 0.1);
  CHECK(probability_weight(0.9, 0.65) < 0.9);
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double w = probability_weight(i / 100.0, 0.65);
    CHECK(w > prev);
    prev = w;
  }
  CHECK_THROWS_AS(probability_weight(-0.1, 0.65), std::invalid_argument);
  CHECK_THROWS_AS(probability_weight(1.1, 0.65), std::invalid_argument);
  CHECK_THROWS_AS(probability_weight(0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(probability_weight(0.5, 1.0001), std::invalid_argument);
}

TEST_CASE("optimism reweighting: oracle, symmetry, monotone tilt") {
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<double> g = {0.0, 1.0};
  const auto none = optimism_reweight(p, g, 0.0);
  CHECK(none[0] == doctest::Approx(0.5).epsilon(1e-12));
  const auto opt = optimism_reweight(p, g, 1.0);
  CHECK(opt[0] == doctest::Approx(1.0 - kSigmoid1).epsilon(1e-9));
  CHECK(opt[1] == doctest::Approx(kSigmoid1).epsilon(1e-9));
  const auto pess = optimism_reweight(p, g, -1.0);
  CHECK(pess[0] == doctest::Approx(kSigmoid1).epsilon(1e-9));
  CHECK(pess[1] == doctest::Approx(1.0 - kSigmoid1).epsilon(1e-9));

  // expected tilted return is nondecreasing in omega, random instances
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_real_distribution<double> gr(-5.0, 5.0);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 2 + int(rng() % 5);
    std::vector<double> probs(n), rets(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      probs[i] = u(rng);
      total += probs[i];
      rets[i] = gr(rng);
    }
    for (double& v : probs) v /= total;
    double prev_ev = -1e18;
    for (double omega : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) {
      const auto tilted = optimism_reweight(probs, rets, omega);
      double ev = 0.0, mass = 0.0;
      for (int i = 0; i < n; ++i) {
        ev += tilted[i] * rets[i];
        mass += tilted[i];
      }
      CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(ev >= prev_ev - 1e-9);
      prev_ev = ev;
    }
  }
  CHECK_THROWS_AS(optimism_reweight({}, {}, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(optimism_reweight({0.5, 0.5}, {1.0}, 1.0), std::invalid_argument);
  // overflow-safe on large returns
  const auto safe = optimism_reweight({0.5, 0.5}, {0.0, 5000.0}, 1.0);
  CHECK(safe[1] == doctest::Approx(1.0));
}

TEST_CASE("discounting utilities") {
  CHECK(exponential_discount(42.0, 1.0, 1000) == 42.0);
  CHECK(exponential_discount(42.0, 0.5, 0) == 42.0);
  CHECK(exponential_discount(100.0, 0.99, 390) == doctest::Approx(kDiscount390).epsilon(1e-9));

  CHECK(hyperbolic_discount(42.0, 0.0, 390) == 42.0);
  CHECK(hyperbolic_discount(100.0, 0.01, 390) ==
        doctest::Approx(100.0 / 4.9).epsilon(1e-9));

  // preference reversal under a common added delay, impossible exponentially
  const double k = 0.1;  // per day
  const double soon_small = hyperbolic_discount(10000.0, k, 0.0);
  const double later_large = hyperbolic_discount(11000.0, k, 7.0);
  CHECK(soon_small == doctest::Approx(10000.0));
  CHECK(later_large == doctest::Approx(11000.0 / 1.7).epsilon(1e-9));
  CHECK(soon_small > later_large);
  const double far_small = hyperbolic_discount(10000.0, k, 365.0);
  const double far_large = hyperbolic_discount(11000.0, k, 372.0);
  CHECK(far_small == doctest::Approx(10000.0 / 37.5).epsilon(1e-9));
  CHECK(far_large == doctest::Approx(11000.0 / 38.2).epsilon(1e-9));
  CHECK(far_large > far_small);
  for (double gamma : {0.9, 0.99, 0.999}) {
    const double near_ratio = exponential_discount(11000.0, gamma, 7.0) /
                              exponential_discount(10000.0, gamma, 0.0);
    const double far_ratio = exponential_discount(11000.0, gamma, 372.0) /
                             exponential_discount(10000.0, gamma, 365.0);
    CHECK(near_ratio == doctest::Approx(far_ratio).epsilon(1e-12));
  }
}

TEST_CASE("greedy policy: tie rule and invariances") {
  std::array<double, kNumActions> row = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(greedy_action(row) == 8);
  row.fill(0.25);
  CHECK(greedy_action(row) == 0);
  row = {0, 3, 1, 3, 0, 0, 0, 0, 0};
  CHECK(greedy_action(row) == 1);  // lowest index among the maxima
  std::array<double, kNumActions> scaled = row;
  for (double& v : scaled) v = 7.5 * v + 2.0;
  CHECK(greedy_action(scaled) == greedy_action(row));
}

TEST_CASE("q_update applies the profile-shaped backup") {
  QTable q;
  q_update(q, 0, 2, 50.0, 1, true, 1.0, Rational{}, 0.99);
  CHECK(q.get(0, 2) == 50.0);

  // repeated updates on a fixed transition converge to r + gamma * V(s')
  QTable q2;
  q2.row(1)[0] = 10.0;
  for (int i = 0; i < 400; ++i) q2.row(7);  // noop, table growth is harmless
  for (int i = 0; i < 400; ++i) q_update(q2, 0, 3, 2.0, 1, false, 0.1, Rational{}, 0.5);
  CHECK(q2.get(0, 3) == doctest::Approx(2.0 + 0.5 * 10.0).epsilon(1e-9));

  // prospect shapes the reward through the utility
  QTable q3;
  q_update(q3, 0, 0, -100.0, 1, true, 1.0, Prospect{2.5, 0.65}, 0.99);
  CHECK(q3.get(0, 0) == doctest::Approx(-2.5 * kLn101).epsilon(1e-9));

  // myopic gamma=0 ignores the continuation value
  QTable q4;
  q4.row(1)[0] = 1000.0;
  q_update(q4, 0, 0, 3.0, 1, false, 1.0, Myopic{0.0}, 0.99);
  CHECK(q4.get(0, 0) == 3.0);

  CHECK_THROWS_AS(q_update(q, 0, 0, 1.0, 1, false, 0.0, Rational{}, 0.99),
                  std::invalid_argument);
  CHECK_THROWS_AS(q_update(q, 0, 0, 1.0, 1, false, 1.5, Rational{}, 0.99),
                  std::invalid_argument);
}

TEST_CASE("epsilon schedule is linear then flat") {
  TrainConfig cfg;
  cfg.episodes = 1000;
  CHECK(epsilon_at(cfg, 0) == 1.0);
  CHECK(epsilon_at(cfg, 400) == doctest::Approx(0.525).epsilon(1e-12));
  CHECK(epsilon_at(cfg, 800) == 0.05);
  CHECK(epsilon_at(cfg, 999) == 0.05);
}

TEST_CASE("train_online learns a two-step synthetic environment") {
  // state 0: action 3 pays 2; state 1: action 7 pays 5; then terminal
  const auto runner = [](int, std::uint64_t episode_seed, InvestorBrain& brain) {
    std::mt19937_64 rng(episode_seed);
    const StateVector dummy;
    const int a0 = brain.act(dummy, 0, rng);
    brain.observe(0, a0, a0 == 3 ? 2.0 : 0.0, 1, false);
    const int a1 = brain.act(dummy, 1, rng);
    brain.observe(1, a1, a1 == 7 ? 5.0 : 0.0, 2, true);
  };
  TrainConfig cfg;
  cfg.episodes = 800;
  cfg.gamma = 0.5;
  cfg.seed = 11;
  const PolicyArtifact art = train_online(runner, toy_disc(), cfg, Rational{});
  CHECK(art.q.get(1, 7) == doctest::Approx(5.0).epsilon(1e-3));
  CHECK(art.q.get(0, 3) == doctest::Approx(2.0 + 0.5 * 5.0).epsilon(1e-3));
  CHECK(greedy_policy(art.q, 0) == 3);
  CHECK(greedy_policy(art.q, 1) == 7);
  CHECK(art.manifest.episodes == 800);

  // identical config -> identical table, bit for bit
  const PolicyArtifact again = train_online(runner, toy_disc(), cfg, Rational{});
  REQUIRE(again.q.rows().size() == art.q.rows().size());
  for (const auto& [s, row] : art.q.rows())
    for (int a = 0; a < kNumActions; ++a) CHECK(again.q.get(s, a) == row[std::size_t(a)]);

  // bounded trains exactly as rational, beta only matters at acting time
  const PolicyArtifact bounded = train_online(runner, toy_disc(), cfg, Bounded{0.5});
  for (const auto& [s, row] : art.q.rows())
    for (int a = 0; a < kNumActions; ++a) CHECK(bounded.q.get(s, a) == row[std::size_t(a)]);
  CHECK(profile_label(bounded.profile) == "bounded:0.5");

  // a different seed explores differently
  TrainConfig other = cfg;
  other.seed = 12;
  const PolicyArtifact differs = train_online(runner, toy_disc(), other, Rational{});
  bool any_diff = false;
  for (const auto& [s, row] : art.q.rows())
    for (int a = 0; a < kNumActions; ++a)
      if (differs.q.get(s, a) != row[std::size_t(a)]) any_diff = true;
  CHECK(any_diff);

  // myopic gamma=0 drops the continuation term
  const PolicyArtifact myopic = train_online(runner, toy_disc(), cfg, Myopic{0.0});
  CHECK(myopic.q.get(0, 3) == doctest::Approx(2.0).epsilon(1e-3));

  CHECK_THROWS_AS(
      train_online(runner, toy_disc(), TrainConfig{0, 0.1, 0.99, 1, 0.05, 0.8, 1},
                   Rational{}),
      std::invalid_argument);
}

TEST_CASE("train_online with prospect shapes the stored values") {
  const auto runner = [](int, std::uint64_t episode_seed, InvestorBrain& brain) {
    std::mt19937_64 rng(episode_seed);
    const StateVector dummy;
    const int a = brain.act(dummy, 0, rng);
    brain.observe(0, a, a == 0 ? -100.0 : 0.0, 1, true);
  };
  TrainConfig cfg;
  cfg.episodes = 60;
  cfg.alpha = 1.0;
  cfg.seed = 3;
  const PolicyArtifact art = train_online(runner, toy_disc(), cfg, Prospect{2.5, 0.65});
  CHECK(art.q.get(0, 0) == doctest::Approx(-2.5 * kLn101).epsilon(1e-9));
}

TEST_CASE("planning matches exact value iteration on the toy chain") {
  PlanConfig pc;
  pc.gamma = 0.5;
  pc.tol = 1e-12;
  const PlanResult rational = plan_with_model(chain_toy(), toy_disc(), Rational{}, pc);
  CHECK(rational.artifact.q.get(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(rational.artifact.q.get(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rational.artifact.q.get(2, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(rational.residual <= pc.tol);

  const PlanResult myopic = plan_with_model(chain_toy(), toy_disc(), Myopic{0.0}, pc);
  CHECK(myopic.artifact.q.get(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(myopic.artifact.q.get(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("planning applies the optimism tilt exactly") {
  PlanConfig pc;
  pc.gamma = 0.5;
  pc.tol = 1e-12;
  const PlanResult rational = plan_with_model(optimism_toy(), toy_disc(), Rational{}, pc);
  CHECK(rational.artifact.q.get(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rational.artifact.q.get(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(greedy_policy(rational.artifact.q, 0) == 0);  // tie -> lowest index

  const PlanResult opt =
      plan_with_model(optimism_toy(), toy_disc(), Optimistic{1.0}, pc);
  CHECK(opt.artifact.q.get(0, 1) == doctest::Approx(kOptToy).epsilon(1e-9));
  CHECK(opt.artifact.q.get(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(greedy_policy(opt.artifact.q, 0) == 1);

  const PlanResult pess =
      plan_with_model(optimism_toy(), toy_disc(), Pessimistic{-1.0}, pc);
  CHECK(pess.artifact.q.get(0, 1) == doctest::Approx(kPessToy).epsilon(1e-9));
  CHECK(greedy_policy(pess.artifact.q, 0) == 0);
}

TEST_CASE("planning with prospect weighting prefers the overweighted gamble") {
  PlanConfig pc;
  pc.gamma = 0.9;
  pc.tol = 1e-12;
  const PlanResult rational = plan_with_model(gamble_toy(), toy_disc(), Rational{}, pc);
  CHECK(rational.artifact.q.get(0, 0) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(rational.artifact.q.get(0, 1) == doctest::Approx(0.175).epsilon(1e-9));
  CHECK(greedy_policy(rational.artifact.q, 0) == 0);

  const PlanResult prospect =
      plan_with_model(gamble_toy(), toy_disc(), Prospect{2.5, 0.65}, pc);
  CHECK(prospect.artifact.q.get(0, 0) == doctest::Approx(kProspectSafe).epsilon(1e-9));
  CHECK(prospect.artifact.q.get(0, 1) == doctest::Approx(kProspectGamble).epsilon(1e-9));
  CHECK(greedy_policy(prospect.artifact.q, 0) == 1);
}

TEST_CASE("planning reports non-convergence with the residual") {
  TabularMdp divergent;
  for (auto& cell : divergent.cells[0]) cell = MdpCell{{0}, {1.0}, {1.0}};
  PlanConfig pc;
  pc.gamma = 1.0;
  pc.max_sweeps = 40;
  CHECK_THROWS_WITH_AS(plan_with_model(divergent, toy_disc(), Rational{}, pc),
                       doctest::Contains("residual"), std::runtime_error);
  CHECK_THROWS_AS(plan_with_model(TabularMdp{}, toy_disc(), Rational{}, PlanConfig{}),
                  std::invalid_argument);
}

TEST_CASE("policy artifacts round-trip and reject tampered discretizations") {
  std::vector<StateVector> samples;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 300; ++i) {
    StateVector s;
    for (int f = 0; f < StateVector::kFeatures; ++f) s.set_feature(f, u(rng));
    samples.push_back(s);
  }
  PolicyArtifact art;
  art.disc = calibrate_discretization(samples);
  art.profile = Prospect{2.5, 0.65};
  art.manifest = {0xabcdef, 123, 99, 0.97};
  std::uniform_real_distribution<double> qv(-1e4, 1e4);
  for (int i = 0; i < 50; ++i) {
    auto& row = art.q.row(rng() % 10000);
    for (double& v : row) v = qv(rng);
  }

  const std::string path = "artifact_roundtrip.policy";
  art.save(path);
  const PolicyArtifact back = PolicyArtifact::load(path);
  CHECK(profile_label(back.profile) == "prospect:2.5:0.65");
  CHECK(back.manifest.config_hash == art.manifest.config_hash);
  CHECK(back.manifest.episodes == 123);
  CHECK(back.manifest.seed == 99);
  CHECK(back.manifest.gamma == 0.97);
  CHECK(back.disc.hash() == art.disc.hash());
  REQUIRE(back.q.rows().size() == art.q.rows().size());
  for (const auto& [s, row] : art.q.rows())
    for (int a = 0; a < kNumActions; ++a)
      CHECK(back.q.get(s, a) == row[std::size_t(a)]);  // exact, not approximate

  // corrupt one discretization edge: stored hash no longer matches
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  in.close();
  std::string text = buf.str();
  const auto pos = text.find("disc mom1 ");
  REQUIRE(pos != std::string::npos);
  text.insert(pos + 10, "9");
  const std::string tampered = "artifact_tampered.policy";
  std::ofstream(tampered) << text;
  CHECK_THROWS_WITH_AS(PolicyArtifact::load(tampered),
                       doctest::Contains("hash mismatch"), std::runtime_error);

  std::ofstream("artifact_bad_magic.policy") << "not-a-policy\n";
  CHECK_THROWS_AS(PolicyArtifact::load("artifact_bad_magic.policy"), std::runtime_error);
  CHECK_THROWS_AS(PolicyArtifact::load("no_such_file.policy"), std::runtime_error);
  std::remove(path.c_str());
  std::remove(tampered.c_str());
  std::remove("artifact_bad_magic.policy");
}

TEST_CASE("boltzmann brain: uniform at beta 0, argmax at high beta") {
  QTable q;
  auto& row = q.row(42);
  row = {3, 1, 4, 1, 5, 9, 2, 6, 5};
  std::mt19937_64 rng(2024);
  const StateVector dummy;

  BoltzmannBrain zero(q, 0.0);
  std::array<int, kNumActions> counts{};
  const int draws = 9000;
  for (int i = 0; i < draws; ++i) counts[std::size_t(zero.act(dummy, 42, rng))]++;
  const double expected = double(draws) / kNumActions;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 20.090235029663233);  // chi-square 99th percentile, 8 dof

  BoltzmannBrain sharp(q, 1e3);
  int argmax_hits = 0;
  for (int i = 0; i < 2000; ++i)
    if (sharp.act(dummy, 42, rng) == 5) ++argmax_hits;
  CHECK(argmax_hits == 2000);

  CHECK_THROWS_AS(BoltzmannBrain(q, -1.0), std::invalid_argument);
}

TEST_CASE("investor agent: telescoping rewards and own-history features") {
  MarketConfig mc;
  mc.fundamental.ou.sigma = 10.0;
  std::vector<std::unique_ptr<Agent>> extras;
  RandomBrain random_brain;
  const DiscretizationSpec disc;  // zero edges are still a total function
  extras.push_back(std::make_unique<InvestorAgent>("rl 0", &random_brain, disc));
  std::vector<Agent*> handles;
  Simulation sim = make_market(mc, 404, std::move(extras), &handles);
  REQUIRE(handles.size() == 1);
  const auto* investor = dynamic_cast<const InvestorAgent*>(handles[0]);
  REQUIRE(investor != nullptr);
  const DayLog log = sim.run_day();

  const InvestorTrajectory& traj = investor->trajectory();
  CHECK(traj.states.size() == kDayMinutes + 1);
  CHECK(traj.disc.size() == kDayMinutes + 1);
  CHECK(traj.marks.size() == kDayMinutes + 1);
  CHECK(traj.actions.size() == kDayMinutes);
  CHECK(traj.rewards.size() == kDayMinutes);

  Money total = 0;
  for (const Money r : traj.rewards) total += r;
  CHECK(total == traj.final_pv - traj.initial_pv);  // exact, integer units
  CHECK(traj.initial_pv == mc.initial_cash);

  for (const std::uint32_t s : traj.disc) CHECK(s < DiscretizationSpec::kNumStates);
  for (const double m : traj.marks) CHECK(m > 0.0);
  for (const int a : traj.actions) {
    CHECK(a >= 0);
    CHECK(a < kNumActions);
  }
  // the investor appears in the participant roster
  bool found = false;
  for (const auto& name : log.agent_names) found = found || name == "rl 0";
  CHECK(found);
}

TEST_CASE("investor agent: quote history counts placements over five minutes") {
  MarketConfig mc;
  mc.fundamental.ou.sigma = 0.0;
  mc.noise_agents = 0;  // keep the tape clean: ladder quotes only
  mc.momentum_agents = 0;
  mc.value_agents = 0;
  std::vector<int> script(kDayMinutes, 1);  // buy at half a cent inside, every minute
  ReplayBrain brain(script);
  std::vector<std::unique_ptr<Agent>> extras;
  extras.push_back(std::make_unique<InvestorAgent>("rl 0", &brain, DiscretizationSpec{}));
  std::vector<Agent*> handles;
  Simulation sim = make_market(mc, 7, std::move(extras), &handles);
  const auto* investor = dynamic_cast<const InvestorAgent*>(handles[0]);
  sim.run_day();

  const InvestorTrajectory& traj = investor->trajectory();
  // at minute m the window holds the placements of minutes m-5..m-1
  CHECK(traj.states[0].quote_count == 0.0);
  CHECK(traj.states[1].quote_count == 1.0);
  CHECK(traj.states[3].quote_count == 3.0);
  CHECK(traj.states[6].quote_count == 5.0);
  CHECK(traj.states[300].quote_count == 5.0);
  CHECK(traj.states[6].quote_vol == 10.0);
  CHECK(traj.states[6].quote_dist > 0.0);

  // all-hold script: no orders, no rewards, flat portfolio
  ReplayBrain holds(std::vector<int>(kDayMinutes, 0));
  std::vector<std::unique_ptr<Agent>> extras2;
  extras2.push_back(
      std::make_unique<InvestorAgent>("rl 0", &holds, DiscretizationSpec{}));
  std::vector<Agent*> handles2;
  Simulation sim2 = make_market(mc, 7, std::move(extras2), &handles2);
  const auto* idle = dynamic_cast<const InvestorAgent*>(handles2[0]);
  sim2.run_day();
  CHECK(idle->pnl() == 0);
  for (const Money r : idle->trajectory().rewards) CHECK(r == 0);
  for (const auto& s : idle->trajectory().states) CHECK(s.quote_count == 0.0);
}
