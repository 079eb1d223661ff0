#include "msim/market.hpp"

#include <stdexcept>

namespace msim {

FundamentalPath make_fundamental(const FundamentalSpec& spec, int minutes, std::uint64_t seed) {
  switch (spec.kind) {
    case FundamentalSpec::Kind::Ou:
      return generate_ou_path(spec.ou, minutes, mix64(seed, fnv1a64("fundamental")));
    case FundamentalSpec::Kind::Sine:
    case FundamentalSpec::Kind::TrendShock:
    case FundamentalSpec::Kind::Decline: {
      ScenarioKind kind = spec.scenario;
      kind.shape = spec.kind == FundamentalSpec::Kind::Sine ? ScenarioShape::SineWave
                   : spec.kind == FundamentalSpec::Kind::TrendShock
                       ? ScenarioShape::TrendWithShock
                       : ScenarioShape::MonotoneDecline;
      return generate_crafted_path(kind, spec.base, minutes);
    }
    case FundamentalSpec::Kind::Csv:
      return FundamentalPath::from_csv(spec.csv_path);
  }
  throw std::logic_error("unreachable fundamental kind");
}

Simulation make_market(const MarketConfig& cfg, std::uint64_t seed,
                       std::vector<std::unique_ptr<Agent>> extra_agents,
                       std::vector<Agent*>* extra_handles) {
  const int total = cfg.value_agents + cfg.market_makers + cfg.momentum_agents +
                    cfg.noise_agents + static_cast<int>(extra_agents.size());
  if (total <= 0) throw std::invalid_argument("empty agent roster");

  Simulation sim(make_fundamental(cfg.fundamental, cfg.minutes, seed), cfg.minutes, seed);

  auto fund = [&](Agent* a) {
    sim.account(a).cash = cfg.initial_cash;
    return a;
  };

  for (int i = 0; i < cfg.value_agents; ++i) {
    Agent* a = fund(sim.add_agent(
        std::make_unique<ValueAgent>("value_" + std::to_string(i), cfg.value)));
    sim.schedule_wakeup(a, sample_poisson_gap(cfg.value.lambda_per_ns, sim.rng(a)));
  }
  for (int i = 0; i < cfg.market_makers; ++i) {
    Agent* a = fund(sim.add_agent(
        std::make_unique<MarketMakerAgent>("mm_" + std::to_string(i), cfg.market_maker)));
    sim.schedule_wakeup(a, 0);
  }
  for (int i = 0; i < cfg.momentum_agents; ++i) {
    Agent* a = fund(sim.add_agent(
        std::make_unique<MomentumAgent>("momentum_" + std::to_string(i), cfg.momentum)));
    // Own clock phase, so periodic traders neither fire in lockstep with each
    // other nor sit exactly on the sampling grid.
    const Timestamp period = static_cast<Timestamp>(cfg.momentum.wake_minutes) * kNsPerMinute;
    sim.schedule_wakeup(a, std::uniform_int_distribution<Timestamp>(0, period - 1)(sim.rng(a)));
  }
  for (int i = 0; i < cfg.noise_agents; ++i) {
    Agent* a = fund(sim.add_agent(
        std::make_unique<NoiseAgent>("noise_" + std::to_string(i), cfg.noise)));
    const Timestamp arrival = cfg.minutes > 0
        ? std::uniform_int_distribution<Timestamp>(0, sim.day_end() - 1)(sim.rng(a))
        : 0;
    sim.schedule_wakeup(a, arrival);
  }
  for (auto& extra : extra_agents) {
    Agent* a = fund(sim.add_agent(std::move(extra)));
    sim.schedule_wakeup(a, 0);
    if (extra_handles) extra_handles->push_back(a);
  }
  return sim;
}

}  // namespace msim
