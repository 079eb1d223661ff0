#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "msim/agents.hpp"
#include "msim/fundamental.hpp"
#include "msim/sim.hpp"

namespace msim {

struct FundamentalSpec {
  enum class Kind { Ou, Sine, TrendShock, Decline, Csv };
  Kind kind = Kind::Ou;
  OUParams ou;
  ScenarioKind scenario;   // amplitude/periods/slope/... for the crafted kinds
  double base = 200000.0;  // crafted-path starting level, price units
  std::string csv_path;
};

// One full market per Table-2-style roster. Counts of zero are allowed as
// long as the overall roster (with extra agents) is non-empty.
struct MarketConfig {
  int minutes = kDayMinutes;
  Money initial_cash = 2'000'000;  // per agent, half-cent units ($10,000)
  int value_agents = 2;
  ValueAgentConfig value;
  int market_makers = 1;
  MarketMakerConfig market_maker;
  int momentum_agents = 2;
  MomentumConfig momentum;
  int noise_agents = 20;
  NoiseConfig noise;
  FundamentalSpec fundamental;
};

// Materializes the fundamental path for one day. OU paths draw from a stream
// derived from the day seed; crafted paths are seed-independent.
FundamentalPath make_fundamental(const FundamentalSpec& spec, int minutes, std::uint64_t seed);

// Builds the simulation, registers the background roster and schedules its
// initial wakeups. Extra agents (investors) are registered after the roster,
// given the same initial cash, and woken at t=0.
Simulation make_market(const MarketConfig& cfg, std::uint64_t seed,
                       std::vector<std::unique_ptr<Agent>> extra_agents = {},
                       std::vector<Agent*>* extra_handles = nullptr);

}  // namespace msim
