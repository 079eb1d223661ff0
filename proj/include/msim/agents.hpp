#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "msim/sim.hpp"
#include "msim/types.hpp"

namespace msim {

struct ValueAgentConfig {
  double lambda_per_ns = 5.7e-12;  // Poisson arrival rate, ~once per 2.9 min
  double obs_stddev = 100.0;       // fundamental observation noise, price units
  std::int64_t size = 100;
};

struct MarketMakerConfig {
  int wake_minutes = 1;
  std::int64_t level_size = 10;
  int num_levels = 10;  // quotes at offsets 1..num_levels each side
};

struct MomentumConfig {
  int wake_minutes = 5;
  int short_window = 20;  // minutes
  int long_window = 50;
  // sizes drawn from the shared heavy-tailed law, mean alpha*xm/(alpha-1) = 100
  double pareto_alpha = 2.0;
  double pareto_xm = 50.0;
};

struct NoiseConfig {
  double pareto_alpha = 2.0;
  double pareto_xm = 50.0;  // mean size alpha*xm/(alpha-1) = 100
};

enum class Act { Hold, Buy, Sell };

struct OrderIntent {
  Act act = Act::Hold;
  Price price = 0;
  std::int64_t size = 0;
};

// Sell at mid when mid > observed fundamental, buy when below, hold on a tie.
// The limit price is the mid rounded toward the passive side.
OrderIntent value_agent_decide(Price observed, double mid, std::int64_t size);

// Ladder of cfg.num_levels quotes per side, stepping outward from the given
// top-of-book pair. Bid levels that would cross zero are skipped; a crossed
// pair (top_bid >= top_ask) throws.
std::vector<OrderIntent> market_maker_decide(Price top_bid, Price top_ask,
                                             const MarketMakerConfig& cfg);

// Compares the short- and long-window means of the per-minute mid series
// ending at minute t. Holds while history is insufficient (or gappy).
Act momentum_agent_decide(const std::vector<double>& mids, int t, const MomentumConfig& cfg);

Side sample_noise_side(std::mt19937_64& rng);
// Integer order size from Pareto(alpha, xm), never below 1.
std::int64_t sample_pareto_size(double alpha, double xm, std::mt19937_64& rng);
std::int64_t sample_noise_size(const NoiseConfig& cfg, std::mt19937_64& rng);

// Exponential inter-arrival gap in nanoseconds, always >= 1.
Timestamp sample_poisson_gap(double lambda_per_ns, std::mt19937_64& rng);

// --- simulation adapters ---

class ValueAgent : public Agent {
 public:
  ValueAgent(std::string name, ValueAgentConfig cfg) : Agent(std::move(name)), cfg_(cfg) {}
  void on_wakeup(Simulation& sim) override;

 private:
  ValueAgentConfig cfg_;
};

class MarketMakerAgent : public Agent {
 public:
  MarketMakerAgent(std::string name, MarketMakerConfig cfg) : Agent(std::move(name)), cfg_(cfg) {}
  void on_wakeup(Simulation& sim) override;

 private:
  MarketMakerConfig cfg_;
};

class MomentumAgent : public Agent {
 public:
  MomentumAgent(std::string name, MomentumConfig cfg) : Agent(std::move(name)), cfg_(cfg) {}
  void on_wakeup(Simulation& sim) override;

 private:
  MomentumConfig cfg_;
};

class NoiseAgent : public Agent {
 public:
  NoiseAgent(std::string name, NoiseConfig cfg) : Agent(std::move(name)), cfg_(cfg) {}
  void on_wakeup(Simulation& sim) override;

 private:
  NoiseConfig cfg_;
};

}  // namespace msim
