#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "msim/market.hpp"
#include "msim/sim.hpp"

using namespace msim;

namespace {

FundamentalPath flat_path(int minutes, double level = 200000.0) {
  return FundamentalPath(std::vector<double>(minutes, level));
}

// Minimal scripted participant for kernel-level tests.
class ScriptAgent : public Agent {
 public:
  ScriptAgent(std::string name, std::vector<Timestamp>* order_log)
      : Agent(std::move(name)), order_log_(order_log) {}
  void on_wakeup(Simulation& sim) override {
    ++wakeups;
    if (order_log_) order_log_->push_back(sim.now());
  }
  int wakeups = 0;

 private:
  std::vector<Timestamp>* order_log_;
};

class MinuteAgent : public Agent {
 public:
  explicit MinuteAgent(std::string name) : Agent(std::move(name)) {}
  void on_wakeup(Simulation& sim) override {
    ++wakeups;
    sim.schedule_wakeup(this, sim.now() + kNsPerMinute);
  }
  int wakeups = 0;
};

bool same_log(const DayLog& a, const DayLog& b) {
  if (a.trades.size() != b.trades.size()) return false;
  for (std::size_t i = 0; i < a.trades.size(); ++i) {
    const Trade& x = a.trades[i].trade;
    const Trade& y = b.trades[i].trade;
    if (x.time != y.time || x.price != y.price || x.size != y.size || x.buyer != y.buyer ||
        x.seller != y.seller || x.maker_order != y.maker_order) {
      return false;
    }
  }
  if (a.minutes.size() != b.minutes.size()) return false;
  for (std::size_t i = 0; i < a.minutes.size(); ++i) {
    const MinuteRow& x = a.minutes[i];
    const MinuteRow& y = b.minutes[i];
    if (x.best_bid != y.best_bid || x.best_ask != y.best_ask || x.mid != y.mid ||
        x.bid_vol != y.bid_vol || x.ask_vol != y.ask_vol || x.traded != y.traded) {
      return false;
    }
  }
  if (a.order_events.size() != b.order_events.size()) return false;
  if (a.portfolios.size() != b.portfolios.size()) return false;
  for (std::size_t i = 0; i < a.portfolios.size(); ++i) {
    if (a.portfolios[i].size() != b.portfolios[i].size()) return false;
    for (std::size_t j = 0; j < a.portfolios[i].size(); ++j) {
      if (a.portfolios[i][j].cash != b.portfolios[i][j].cash ||
          a.portfolios[i][j].holdings != b.portfolios[i][j].holdings) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("table-2 roster registers 25 background agents") {
  MarketConfig cfg;
  cfg.minutes = 30;
  auto sim = make_market(cfg, 7);
  auto log = sim.run_day();
  CHECK(log.agent_names.size() == 25);
  CHECK(log.minutes.size() == 30);
}

TEST_CASE("empty roster is rejected") {
  MarketConfig cfg;
  cfg.value_agents = 0;
  cfg.market_makers = 0;
  cfg.momentum_agents = 0;
  cfg.noise_agents = 0;
  CHECK_THROWS_AS(make_market(cfg, 1), std::invalid_argument);

  Simulation sim(flat_path(10), 10, 1);
  CHECK_THROWS_AS(sim.run_day(), std::invalid_argument);
}

TEST_CASE("duplicate agent names are rejected") {
  Simulation sim(flat_path(10), 10, 1);
  sim.add_agent(std::make_unique<ScriptAgent>("a", nullptr));
  CHECK_THROWS_AS(sim.add_agent(std::make_unique<ScriptAgent>("a", nullptr)),
                  std::invalid_argument);
}

TEST_CASE("fundamental shorter than the day is rejected") {
  CHECK_THROWS_AS(Simulation(flat_path(100), 390, 1), std::invalid_argument);
}

TEST_CASE("same config and seed give identical day logs") {
  MarketConfig cfg;
  cfg.minutes = 120;
  auto log1 = make_market(cfg, 7).run_day();
  auto log2 = make_market(cfg, 7).run_day();
  CHECK(same_log(log1, log2));
  CHECK_FALSE(log1.trades.empty());  // the roster actually trades

  auto log3 = make_market(cfg, 8).run_day();
  CHECK_FALSE(same_log(log1, log3));
}

TEST_CASE("wakeups in the past are rejected, ties delivered in insertion order") {
  Simulation sim(flat_path(10), 10, 99);
  std::vector<Timestamp> order;
  auto* a = sim.add_agent(std::make_unique<ScriptAgent>("a", &order));
  auto* b = sim.add_agent(std::make_unique<ScriptAgent>("b", &order));

  sim.schedule_wakeup(b, 2 * kNsPerMinute);  // same time, inserted first
  sim.schedule_wakeup(a, 2 * kNsPerMinute);
  sim.schedule_wakeup(a, kNsPerMinute);
  CHECK_THROWS_AS(sim.schedule_wakeup(a, -1), std::invalid_argument);

  auto log = sim.run_day();
  auto* sa = static_cast<ScriptAgent*>(a);
  auto* sb = static_cast<ScriptAgent*>(b);
  CHECK(sa->wakeups == 2);
  CHECK(sb->wakeups == 1);
  (void)log;
}

TEST_CASE("a minute agent receives exactly one wakeup per minute") {
  Simulation sim(flat_path(390), 390, 5);
  auto* a = sim.add_agent(std::make_unique<MinuteAgent>("rl_like"));
  sim.schedule_wakeup(a, 0);
  sim.run_day();
  CHECK(static_cast<MinuteAgent*>(a)->wakeups == 390);
}

TEST_CASE("zero-duration day yields an empty trade list") {
  Simulation sim(FundamentalPath{}, 0, 1);
  sim.add_agent(std::make_unique<ScriptAgent>("a", nullptr));
  auto log = sim.run_day();
  CHECK(log.trades.empty());
  CHECK(log.minutes.empty());
}

TEST_CASE("noise-only market never trades") {
  MarketConfig cfg;
  cfg.minutes = 60;
  cfg.value_agents = 0;
  cfg.market_makers = 0;
  cfg.momentum_agents = 0;
  cfg.noise_agents = 20;
  auto log = make_market(cfg, 3).run_day();
  CHECK(log.trades.empty());
}

TEST_CASE("noise plus market maker trades involve only those agents") {
  MarketConfig cfg;
  cfg.minutes = 120;
  cfg.value_agents = 0;
  cfg.momentum_agents = 0;
  auto log = make_market(cfg, 3).run_day();
  CHECK_FALSE(log.trades.empty());
  std::set<std::string> names;
  for (const TradeRec& tr : log.trades) {
    names.insert(log.agent_names[static_cast<std::size_t>(tr.trade.buyer)]);
    names.insert(log.agent_names[static_cast<std::size_t>(tr.trade.seller)]);
  }
  for (const std::string& n : names) {
    CHECK((n.rfind("noise_", 0) == 0 || n.rfind("mm_", 0) == 0));
  }
}

TEST_CASE("cash and shares are conserved across a busy day") {
  MarketConfig cfg;
  cfg.minutes = 120;
  auto sim = make_market(cfg, 11);
  auto log = sim.run_day();  // run_day itself throws on violation
  Money cash = 0;
  std::int64_t shares = 0;
  for (const auto& series : log.portfolios) {
    cash += series.back().cash;
    shares += series.back().holdings;
  }
  CHECK(cash == 25 * 2'000'000);
  CHECK(shares == 0);
}

TEST_CASE("every fill references a previously submitted, uncancelled order") {
  MarketConfig cfg;
  cfg.minutes = 120;
  auto log = make_market(cfg, 13).run_day();
  REQUIRE_FALSE(log.trades.empty());
  std::map<std::int64_t, Timestamp> submitted;
  std::map<std::int64_t, Timestamp> cancelled;
  for (const OrderEvent& ev : log.order_events) {
    if (ev.kind == 'S') submitted.emplace(ev.order_id, ev.time);
    if (ev.kind == 'C') cancelled.emplace(ev.order_id, ev.time);
  }
  for (const TradeRec& tr : log.trades) {
    for (std::int64_t id : {tr.trade.maker_order, tr.trade.taker_order}) {
      REQUIRE(submitted.count(id));
      CHECK(submitted[id] <= tr.trade.time);
      if (cancelled.count(id)) CHECK(cancelled[id] >= tr.trade.time);
    }
  }
}

TEST_CASE("minute sampler sees the book before same-minute actions") {
  MarketConfig cfg;
  cfg.minutes = 5;
  cfg.value_agents = 0;
  cfg.momentum_agents = 0;
  cfg.noise_agents = 0;
  auto log = make_market(cfg, 1).run_day();
  REQUIRE(log.minutes.size() == 5);
  // minute 0 was sampled before the market maker's first quote
  CHECK_FALSE(log.minutes[0].mid.has_value());
  CHECK(log.minutes[0].bid_vol == 0);
  // from minute 1 on, the maker's standing quotes are visible
  CHECK(log.minutes[1].mid == doctest::Approx(200000.0));
  CHECK(log.minutes[1].bid_vol == 100);
  CHECK(log.minutes[1].ask_vol == 100);
}

TEST_CASE("day log serializes with the pinned csv schemas") {
  MarketConfig cfg;
  cfg.minutes = 30;
  auto log = make_market(cfg, 2).run_day();
  log.trades_csv("t.csv");
  log.minutes_csv("m.csv");
  std::ifstream t("t.csv"), m("m.csv");
  std::string line;
  std::getline(t, line);
  CHECK(line == "time_ns,price,size,buyer,seller");
  std::getline(m, line);
  CHECK(line == "minute,best_bid,best_ask,mid,depth,bid_vol,ask_vol,fundamental");
  int rows = 0;
  while (std::getline(m, line)) ++rows;
  CHECK(rows == 30);
  std::remove("t.csv");
  std::remove("m.csv");
}
