#include "msim/agents.hpp"

#include <cmath>
#include <stdexcept>

namespace msim {

OrderIntent value_agent_decide(Price observed, double mid, std::int64_t size) {
  const double obs = static_cast<double>(observed);
  if (mid > obs) {
    return {Act::Sell, static_cast<Price>(std::ceil(mid)), size};
  }
  if (mid < obs) {
    return {Act::Buy, static_cast<Price>(std::floor(mid)), size};
  }
  return {};
}

std::vector<OrderIntent> market_maker_decide(Price top_bid, Price top_ask,
                                             const MarketMakerConfig& cfg) {
  if (top_bid >= top_ask) throw std::invalid_argument("market maker quotes would cross");
  std::vector<OrderIntent> intents;
  intents.reserve(static_cast<std::size_t>(cfg.num_levels) * 2);
  for (int off = 0; off < cfg.num_levels; ++off) {
    if (top_bid - off > 0) intents.push_back({Act::Buy, top_bid - off, cfg.level_size});
    intents.push_back({Act::Sell, top_ask + off, cfg.level_size});
  }
  return intents;
}

Act momentum_agent_decide(const std::vector<double>& mids, int t, const MomentumConfig& cfg) {
  if (cfg.short_window >= cfg.long_window) {
    throw std::invalid_argument("momentum short window must be below the long window");
  }
  if (t + 1 < cfg.long_window || t >= static_cast<int>(mids.size())) return Act::Hold;
  auto mean_over = [&](int window) -> double {
    double sum = 0.0;
    for (int i = t - window + 1; i <= t; ++i) {
      sum += mids[static_cast<std::size_t>(i)];
    }
    return sum / window;
  };
  const double short_mean = mean_over(cfg.short_window);
  const double long_mean = mean_over(cfg.long_window);
  if (std::isnan(short_mean) || std::isnan(long_mean)) return Act::Hold;
  if (short_mean > long_mean) return Act::Buy;
  if (short_mean < long_mean) return Act::Sell;
  return Act::Hold;
}

Side sample_noise_side(std::mt19937_64& rng) {
  return std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? Side::Buy : Side::Sell;
}

std::int64_t sample_pareto_size(double alpha, double xm, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  // Inverse CDF of Pareto(alpha, xm); 1-u stays clear of the u=1 pole.
  const double x = xm * std::pow(1.0 - u, -1.0 / alpha);
  const auto size = static_cast<std::int64_t>(std::llround(x));
  return size < 1 ? 1 : size;
}

std::int64_t sample_noise_size(const NoiseConfig& cfg, std::mt19937_64& rng) {
  return sample_pareto_size(cfg.pareto_alpha, cfg.pareto_xm, rng);
}

Timestamp sample_poisson_gap(double lambda_per_ns, std::mt19937_64& rng) {
  if (!(lambda_per_ns > 0.0)) throw std::invalid_argument("arrival rate must be positive");
  const double gap = std::exponential_distribution<double>(lambda_per_ns)(rng);
  const auto ns = static_cast<Timestamp>(std::llround(gap));
  return ns < 1 ? 1 : ns;
}

void ValueAgent::on_wakeup(Simulation& sim) {
  const Price obs = sim.observe_fundamental(cfg_.obs_stddev, sim.rng(this));
  if (const auto mid = sim.mid()) {
    sim.cancel_all(this);  // refresh the outstanding view each arrival
    const OrderIntent intent = value_agent_decide(obs, *mid, cfg_.size);
    if (intent.act != Act::Hold) {
      sim.submit(this, intent.act == Act::Buy ? Side::Buy : Side::Sell, intent.price,
                 intent.size);
    }
  }
  sim.schedule_wakeup(this, sim.now() + sample_poisson_gap(cfg_.lambda_per_ns, sim.rng(this)));
}

void MarketMakerAgent::on_wakeup(Simulation& sim) {
  // Price off the standing book (own ladder included) before refreshing it;
  // the post-cancel residue is too thin to quote against. The top pair is
  // the tightest one that can neither cross itself nor an existing touch.
  Price top_bid, top_ask;
  if (const auto mid = sim.mid()) {
    top_bid = static_cast<Price>(std::ceil(*mid)) - 1;
    top_ask = static_cast<Price>(std::floor(*mid)) + 1;
  } else {
    const Price center = sim.last_trade().value_or(sim.open_anchor());
    top_bid = center - 1;
    top_ask = center + 1;
  }
  sim.cancel_all(this);
  for (const OrderIntent& intent : market_maker_decide(top_bid, top_ask, cfg_)) {
    sim.submit(this, intent.act == Act::Buy ? Side::Buy : Side::Sell, intent.price,
               intent.size);
  }
  sim.schedule_wakeup(this, sim.now() + static_cast<Timestamp>(cfg_.wake_minutes) * kNsPerMinute);
}

void MomentumAgent::on_wakeup(Simulation& sim) {
  const Act act = momentum_agent_decide(sim.minute_mids(), sim.current_minute(), cfg_);
  if (act != Act::Hold) {
    const std::int64_t size = sample_pareto_size(cfg_.pareto_alpha, cfg_.pareto_xm, sim.rng(this));
    sim.submit_market(this, act == Act::Buy ? Side::Buy : Side::Sell, size);
  }
  sim.schedule_wakeup(this, sim.now() + static_cast<Timestamp>(cfg_.wake_minutes) * kNsPerMinute);
}

void NoiseAgent::on_wakeup(Simulation& sim) {
  const Side side = sample_noise_side(sim.rng(this));
  const std::int64_t size = sample_noise_size(cfg_, sim.rng(this));
  // Demand at the touch: a buy priced at the best ask (sell at best bid) takes
  // that level and leaves any remainder resting there. Skip if the far side is
  // empty, there is nothing to price against.
  const auto touch = side == Side::Buy ? sim.best_ask() : sim.best_bid();
  if (touch) sim.submit(this, side, *touch, size);
  // once a day: no reschedule
}

}  // namespace msim
