#include "msim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace msim {

namespace {

void write_opt(std::ofstream& out, const std::optional<Price>& v) {
  if (v) out << *v;
}

void write_opt(std::ofstream& out, const std::optional<double>& v) {
  char buf[64];
  if (v) {
    std::snprintf(buf, sizeof(buf), "%.10g", *v);
    out << buf;
  }
}

}  // namespace

void DayLog::trades_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "time_ns,price,size,buyer,seller\n";
  for (const TradeRec& tr : trades) {
    out << tr.trade.time << ',' << tr.trade.price << ',' << tr.trade.size << ','
        << tr.trade.buyer << ',' << tr.trade.seller << '\n';
  }
}

void DayLog::minutes_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "minute,best_bid,best_ask,mid,depth,bid_vol,ask_vol,fundamental\n";
  char buf[64];
  for (const MinuteRow& row : minutes) {
    out << row.minute << ',';
    write_opt(out, row.best_bid);
    out << ',';
    write_opt(out, row.best_ask);
    out << ',';
    write_opt(out, row.mid);
    out << ',';
    write_opt(out, row.depth);
    out << ',' << row.bid_vol << ',' << row.ask_vol << ',';
    std::snprintf(buf, sizeof(buf), "%.10g", row.fundamental);
    out << buf << '\n';
  }
}

Simulation::Simulation(FundamentalPath fundamental, int minutes, std::uint64_t seed)
    : fundamental_(std::move(fundamental)), minutes_(minutes), seed_(seed) {
  if (minutes_ < 0) throw std::invalid_argument("negative day length");
  if (fundamental_.length() < minutes_) {
    throw std::invalid_argument("fundamental path shorter than the trading day");
  }
  open_anchor_ = minutes_ > 0 ? static_cast<Price>(std::llround(fundamental_.at(0))) : 1;
  // Pre-enqueue the per-minute sampler so it owns the lowest sequence numbers
  // and therefore always runs before same-timestamp agent actions.
  for (int m = 0; m < minutes_; ++m) {
    queue_.push(Ev{static_cast<Timestamp>(m) * kNsPerMinute, next_seq_++, -1});
  }
}

Agent* Simulation::add_agent(std::unique_ptr<Agent> agent) {
  if (started_) throw std::logic_error("cannot register agents after run_day started");
  for (const auto& a : agents_) {
    if (a->name() == agent->name()) {
      throw std::invalid_argument("duplicate agent name " + agent->name());
    }
  }
  agent->id_ = static_cast<std::int32_t>(agents_.size());
  agents_.push_back(std::move(agent));
  accounts_.push_back(Account{});
  agent_open_.emplace_back();
  rngs_.emplace_back(mix64(seed_, fnv1a64(agents_.back()->name())));
  return agents_.back().get();
}

void Simulation::schedule_wakeup(Agent* agent, Timestamp t) {
  if (agent == nullptr || agent->id_ < 0) throw std::invalid_argument("unregistered agent");
  if (t < now_) {
    throw std::invalid_argument("wakeup in the past for " + agent->name());
  }
  if (t >= day_end()) return;  // beyond the close: the day is over for this agent
  queue_.push(Ev{t, next_seq_++, agent->id_});
}

DayLog Simulation::run_day() {
  if (started_) throw std::logic_error("run_day is single-use");
  if (agents_.empty()) throw std::invalid_argument("empty agent roster");
  started_ = true;
  log_.portfolios.resize(agents_.size());

  const Money cash0 = total_cash();
  const std::int64_t shares0 = total_shares();

  while (!queue_.empty()) {
    const Ev ev = queue_.top();
    queue_.pop();
    now_ = ev.time;
    if (ev.agent < 0) {
      sample_minute(static_cast<int>(ev.time / kNsPerMinute));
      continue;
    }
    Agent* agent = agents_[static_cast<std::size_t>(ev.agent)].get();
    try {
      agent->on_wakeup(*this);
    } catch (const std::exception& e) {
      throw std::runtime_error(agent->name() + " failed at t=" + std::to_string(now_) +
                               "ns: " + e.what());
    }
  }

  now_ = day_end();
  for (auto& agent : agents_) {
    try {
      agent->on_day_end(*this);
    } catch (const std::exception& e) {
      throw std::runtime_error(agent->name() + " failed at day end: " + e.what());
    }
  }

  if (total_cash() != cash0 || total_shares() != shares0) {
    throw std::logic_error("conservation violated: cash or shares changed");
  }

  // Final portfolio row at the close.
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    log_.portfolios[i].push_back({accounts_[i].cash, accounts_[i].holdings});
  }
  log_.agent_names.reserve(agents_.size());
  for (const auto& a : agents_) log_.agent_names.push_back(a->name());

  finished_ = true;
  return std::move(log_);
}

void Simulation::sample_minute(int minute) {
  const LobSnapshot snap = book_.snapshot(std::numeric_limits<std::size_t>::max());
  MinuteRow row;
  row.minute = minute;
  if (!snap.bids.empty()) row.best_bid = snap.bids.front().price;
  if (!snap.asks.empty()) row.best_ask = snap.asks.front().price;
  if (row.best_bid && row.best_ask) {
    row.mid = (static_cast<double>(*row.best_bid) + static_cast<double>(*row.best_ask)) / 2.0;
    row.depth = snap.asks.back().price - snap.bids.back().price;
  }
  for (const LobLevel& l : snap.bids) row.bid_vol += l.volume;
  for (const LobLevel& l : snap.asks) row.ask_vol += l.volume;
  row.fundamental = fundamental_.at(std::min(minute, fundamental_.length() - 1));
  row.traded = last_trade_px_;
  log_.minutes.push_back(row);

  minute_mids_.push_back(row.mid.value_or(std::numeric_limits<double>::quiet_NaN()));
  traded_marks_.push_back(static_cast<double>(last_trade_px_.value_or(open_anchor_)));

  for (std::size_t i = 0; i < agents_.size(); ++i) {
    log_.portfolios[i].push_back({accounts_[i].cash, accounts_[i].holdings});
  }
}

SubmitResult Simulation::submit(Agent* agent, Side side, Price price, std::int64_t size) {
  if (agent == nullptr || agent->id_ < 0) throw std::invalid_argument("unregistered agent");
  const double mid_before =
      book_.mid().value_or(std::numeric_limits<double>::quiet_NaN());
  Order order{next_order_id_++, agent->id_, side, price, size, now_};
  const SubmitResult result = book_.submit_limit_order(order);
  log_.order_events.push_back({now_, agent->id_, order.id, 'S', side, price, size});
  for (const Trade& trade : result.trades) settle(trade, mid_before);
  if (result.rested) {
    open_.emplace(order.id, OpenOrder{agent->id_, side, price, result.resting_size});
    agent_open_[static_cast<std::size_t>(agent->id_)].insert(order.id);
  }
  return result;
}

SubmitResult Simulation::submit_market(Agent* agent, Side side, std::int64_t size) {
  const auto far_touch = side == Side::Buy ? book_.best_ask() : book_.best_bid();
  if (!far_touch) return {};
  // Price through the deepest opposite level so the walk is bounded only by
  // the requested size, then cancel whatever would have rested.
  const LobSnapshot depth = book_.snapshot(std::numeric_limits<std::size_t>::max());
  const auto& levels = side == Side::Buy ? depth.asks : depth.bids;
  const Price through = levels.back().price;
  const std::int64_t order_id = next_order_id_;  // id the submit below will take
  SubmitResult result = submit(agent, side, through, size);
  if (result.rested) {
    cancel(agent, order_id);
    result.rested = false;
    result.resting_size = 0;
  }
  return result;
}

void Simulation::settle(const Trade& trade, double mid_before) {
  Account& buyer = accounts_[static_cast<std::size_t>(trade.buyer)];
  Account& seller = accounts_[static_cast<std::size_t>(trade.seller)];
  const Money notional = trade.price * trade.size;
  buyer.cash -= notional;
  buyer.holdings += trade.size;
  seller.cash += notional;
  seller.holdings -= trade.size;
  last_trade_px_ = trade.price;
  log_.trades.push_back({trade, mid_before});

  // Maker-side open-order bookkeeping.
  auto it = open_.find(trade.maker_order);
  if (it != open_.end()) {
    it->second.remaining -= trade.size;
    if (it->second.remaining <= 0) {
      agent_open_[static_cast<std::size_t>(it->second.agent)].erase(trade.maker_order);
      open_.erase(it);
    }
  }

  const std::int32_t maker_agent =
      trade.aggressor == Side::Buy ? trade.seller : trade.buyer;
  const std::int32_t taker_agent =
      trade.aggressor == Side::Buy ? trade.buyer : trade.seller;
  agents_[static_cast<std::size_t>(maker_agent)]->on_fill(
      *this, trade, opposite(trade.aggressor), trade.maker_order, mid_before);
  agents_[static_cast<std::size_t>(taker_agent)]->on_fill(
      *this, trade, trade.aggressor, trade.taker_order, mid_before);
}

std::int64_t Simulation::cancel(Agent* agent, std::int64_t order_id) {
  auto it = open_.find(order_id);
  if (it == open_.end()) return 0;
  if (it->second.agent != agent->id_) {
    throw std::logic_error(agent->name() + " cancelling a foreign order");
  }
  const Side side = it->second.side;
  const Price price = it->second.price;
  agent_open_[static_cast<std::size_t>(agent->id_)].erase(order_id);
  open_.erase(it);
  const std::int64_t remaining = book_.cancel_order(order_id);
  if (remaining > 0) {
    log_.order_events.push_back({now_, agent->id_, order_id, 'C', side, price, remaining});
  }
  return remaining;
}

void Simulation::cancel_all(Agent* agent) {
  const std::set<std::int64_t> ids = agent_open_[static_cast<std::size_t>(agent->id_)];
  for (std::int64_t id : ids) cancel(agent, id);
}

std::int64_t Simulation::open_volume(const Agent* agent) const {
  std::int64_t total = 0;
  for (std::int64_t id : agent_open_[static_cast<std::size_t>(agent->id_)]) {
    total += open_.at(id).remaining;
  }
  return total;
}

const std::set<std::int64_t>& Simulation::open_orders(const Agent* agent) const {
  return agent_open_[static_cast<std::size_t>(agent->id_)];
}

std::optional<std::pair<Side, Price>> Simulation::open_order_info(std::int64_t order_id) const {
  auto it = open_.find(order_id);
  if (it == open_.end()) return std::nullopt;
  return std::make_pair(it->second.side, it->second.price);
}

std::int64_t Simulation::open_order_remaining(std::int64_t order_id) const {
  auto it = open_.find(order_id);
  return it == open_.end() ? 0 : it->second.remaining;
}

Price Simulation::observe_fundamental(double obs_stddev, std::mt19937_64& rng) const {
  const int minute = std::min(current_minute(), fundamental_.length() - 1);
  return observe_noisy(fundamental_, minute, obs_stddev, rng);
}

Account& Simulation::account(const Agent* agent) {
  return accounts_[static_cast<std::size_t>(agent->id())];
}

const Account& Simulation::account(const Agent* agent) const {
  return accounts_[static_cast<std::size_t>(agent->id())];
}

std::mt19937_64& Simulation::rng(const Agent* agent) {
  return rngs_[static_cast<std::size_t>(agent->id())];
}

Money Simulation::total_cash() const {
  Money total = 0;
  for (const Account& a : accounts_) total += a.cash;
  return total;
}

std::int64_t Simulation::total_shares() const {
  std::int64_t total = 0;
  for (const Account& a : accounts_) total += a.holdings;
  return total;
}

}  // namespace msim
