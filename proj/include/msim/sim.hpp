#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "msim/fundamental.hpp"
#include "msim/lob.hpp"
#include "msim/types.hpp"

namespace msim {

class Simulation;

// A market participant. Owned by the Simulation it registers with; it acts
// only inside on_wakeup / on_day_end, through the Simulation's market API.
class Agent {
 public:
  explicit Agent(std::string name) : name_(std::move(name)) {}
  virtual ~Agent() = default;

  virtual void on_wakeup(Simulation& sim) = 0;
  virtual void on_day_end(Simulation& /*sim*/) {}
  // Delivered for both sides of every execution this agent takes part in.
  // mid_before is the mid just before the aggressing order arrived (NaN when
  // the book had no mid).
  virtual void on_fill(Simulation& /*sim*/, const Trade& /*trade*/, Side /*my_side*/,
                       std::int64_t /*my_order_id*/, double /*mid_before*/) {}

  const std::string& name() const { return name_; }
  std::int32_t id() const { return id_; }

 private:
  friend class Simulation;
  std::string name_;
  std::int32_t id_ = -1;
};

struct Account {
  Money cash = 0;
  std::int64_t holdings = 0;
};

inline Money mark_to_market(const Account& a, Price mark) {
  return a.cash + a.holdings * mark;
}

struct TradeRec {
  Trade trade;
  double mid_before = 0.0;  // NaN when undefined
};

struct MinuteRow {
  int minute = 0;
  std::optional<Price> best_bid;
  std::optional<Price> best_ask;
  std::optional<double> mid;
  std::optional<Price> depth;
  std::int64_t bid_vol = 0;
  std::int64_t ask_vol = 0;
  double fundamental = 0.0;
  std::optional<Price> traded;  // last traded price as of this minute boundary
};

struct OrderEvent {
  Timestamp time = 0;
  std::int32_t agent = -1;
  std::int64_t order_id = 0;
  char kind = 'S';  // 'S' submit, 'C' cancel
  Side side = Side::Buy;
  Price price = 0;
  std::int64_t size = 0;
};

struct AgentMinute {
  Money cash = 0;
  std::int64_t holdings = 0;
};

// Complete record of a simulated day, sufficient to recompute every metric.
struct DayLog {
  std::vector<TradeRec> trades;
  std::vector<MinuteRow> minutes;
  std::vector<OrderEvent> order_events;
  std::vector<std::string> agent_names;
  // portfolios[agent][minute] sampled at each minute boundary, plus one final
  // row appended at the close.
  std::vector<std::vector<AgentMinute>> portfolios;

  void trades_csv(const std::string& path) const;
  void minutes_csv(const std::string& path) const;
};

// Deterministic single-day discrete-event market. Time advances only through
// the event queue; ties are resolved by insertion sequence. The per-minute
// sampler's events are enqueued first at construction so each minute row
// reflects the book before any same-timestamp agent action.
class Simulation {
 public:
  Simulation(FundamentalPath fundamental, int minutes, std::uint64_t seed);

  // Registers an agent. Does not schedule anything; callers schedule the
  // first wakeup themselves.
  Agent* add_agent(std::unique_ptr<Agent> agent);

  void schedule_wakeup(Agent* agent, Timestamp t);

  // Drains the queue through end of day, runs day-end hooks, verifies cash /
  // share conservation and returns the log. Single use.
  DayLog run_day();

  // --- market interface used by agents ---
  Timestamp now() const { return now_; }
  int current_minute() const { return static_cast<int>(now_ / kNsPerMinute); }
  int day_minutes() const { return minutes_; }
  Timestamp day_end() const { return static_cast<Timestamp>(minutes_) * kNsPerMinute; }

  const OrderBook& book() const { return book_; }
  std::optional<Price> best_bid() const { return book_.best_bid(); }
  std::optional<Price> best_ask() const { return book_.best_ask(); }
  std::optional<double> mid() const { return book_.mid(); }
  std::optional<Price> last_trade() const { return last_trade_px_; }
  // last trade if any, else the rounded opening fundamental
  Price mark_price() const { return last_trade_px_.value_or(open_anchor_); }
  Price open_anchor() const { return open_anchor_; }

  SubmitResult submit(Agent* agent, Side side, Price price, std::int64_t size);
  // Marketable immediate-or-cancel: priced through the whole opposite side,
  // walks as deep as the size requires and never rests (any residue is
  // cancelled). No-op on an empty opposite side.
  SubmitResult submit_market(Agent* agent, Side side, std::int64_t size);
  // Cancels one of the agent's own resting orders; returns cancelled size
  // (0 if already gone). Throws on a foreign order id.
  std::int64_t cancel(Agent* agent, std::int64_t order_id);
  void cancel_all(Agent* agent);
  // Remaining resting size across the agent's open orders.
  std::int64_t open_volume(const Agent* agent) const;
  const std::set<std::int64_t>& open_orders(const Agent* agent) const;
  std::optional<std::pair<Side, Price>> open_order_info(std::int64_t order_id) const;
  std::int64_t open_order_remaining(std::int64_t order_id) const;

  // Noisy fundamental observation at the current minute.
  Price observe_fundamental(double obs_stddev, std::mt19937_64& rng) const;
  const FundamentalPath& fundamental() const { return fundamental_; }

  // Per-minute series collected by the sampler (index = minute, values as of
  // that minute boundary). minute_mids entries are NaN when the book had no
  // mid; traded_marks carry the last trade forward, seeded with the rounded
  // opening fundamental.
  const std::vector<double>& minute_mids() const { return minute_mids_; }
  const std::vector<double>& traded_marks() const { return traded_marks_; }

  Account& account(const Agent* agent);
  const Account& account(const Agent* agent) const;
  std::mt19937_64& rng(const Agent* agent);

  std::uint64_t seed() const { return seed_; }

 private:
  struct Ev {
    Timestamp time;
    std::uint64_t seq;
    std::int32_t agent;  // -1: minute sample
  };
  struct EvAfter {
    bool operator()(const Ev& a, const Ev& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  struct OpenOrder {
    std::int32_t agent;
    Side side;
    Price price;
    std::int64_t remaining;
  };

  void sample_minute(int minute);
  void settle(const Trade& trade, double mid_before);
  Money total_cash() const;
  std::int64_t total_shares() const;

  FundamentalPath fundamental_;
  int minutes_;
  std::uint64_t seed_;
  Price open_anchor_;

  OrderBook book_;
  std::priority_queue<Ev, std::vector<Ev>, EvAfter> queue_;
  std::uint64_t next_seq_ = 0;
  std::int64_t next_order_id_ = 1;
  Timestamp now_ = 0;
  bool started_ = false;
  bool finished_ = false;
  std::optional<Price> last_trade_px_;

  std::vector<std::unique_ptr<Agent>> agents_;
  std::vector<Account> accounts_;
  std::vector<std::mt19937_64> rngs_;
  std::map<std::int64_t, OpenOrder> open_;
  std::vector<std::set<std::int64_t>> agent_open_;

  std::vector<double> minute_mids_;
  std::vector<double> traded_marks_;

  DayLog log_;
};

}  // namespace msim
