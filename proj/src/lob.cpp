#include "msim/lob.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace msim {

namespace {

void validate(const Order& order) {
  if (order.size <= 0) throw std::invalid_argument("order size must be positive");
  if (order.price <= 0) throw std::invalid_argument("order price must be positive");
}

}  // namespace

SubmitResult OrderBook::submit_limit_order(const Order& order) {
  validate(order);
  if (index_.count(order.id)) {
    throw std::invalid_argument("duplicate order id " + std::to_string(order.id));
  }

  SubmitResult result;
  std::int64_t remaining = order.size;

  auto match_against = [&](auto& levels, auto marketable) {
    while (remaining > 0 && !levels.empty()) {
      auto level_it = levels.begin();
      if (!marketable(level_it->first)) break;
      Level& queue = level_it->second;
      while (remaining > 0 && !queue.empty()) {
        Resting& top = queue.front();
        const std::int64_t fill = std::min(remaining, top.remaining);
        Trade trade;
        trade.time = order.time;
        trade.price = level_it->first;
        trade.size = fill;
        trade.aggressor = order.side;
        trade.maker_order = top.id;
        trade.taker_order = order.id;
        if (order.side == Side::Buy) {
          trade.buyer = order.agent;
          trade.seller = top.agent;
        } else {
          trade.buyer = top.agent;
          trade.seller = order.agent;
        }
        result.trades.push_back(trade);
        remaining -= fill;
        top.remaining -= fill;
        if (top.remaining == 0) {
          index_.erase(top.id);
          queue.pop_front();
        }
      }
      if (queue.empty()) levels.erase(level_it);
    }
  };

  if (order.side == Side::Buy) {
    match_against(asks_, [&](Price p) { return p <= order.price; });
  } else {
    match_against(bids_, [&](Price p) { return p >= order.price; });
  }

  if (remaining > 0) {
    Resting r{order.id, order.agent, remaining, order.time};
    if (order.side == Side::Buy) {
      bids_[order.price].push_back(r);
    } else {
      asks_[order.price].push_back(r);
    }
    index_.emplace(order.id, std::make_pair(order.side, order.price));
    result.rested = true;
    result.resting_size = remaining;
  }
  return result;
}

std::int64_t OrderBook::cancel_order(std::int64_t order_id) {
  auto it = index_.find(order_id);
  if (it == index_.end()) return 0;
  const auto [side, price] = it->second;
  index_.erase(it);

  auto erase_from = [&](auto& levels) -> std::int64_t {
    auto level_it = levels.find(price);
    Level& queue = level_it->second;
    for (auto q = queue.begin(); q != queue.end(); ++q) {
      if (q->id == order_id) {
        const std::int64_t remaining = q->remaining;
        queue.erase(q);
        if (queue.empty()) levels.erase(level_it);
        return remaining;
      }
    }
    return 0;
  };

  return side == Side::Buy ? erase_from(bids_) : erase_from(asks_);
}

LobSnapshot OrderBook::snapshot(std::size_t n_levels) const {
  LobSnapshot snap;
  for (const auto& [price, queue] : bids_) {
    if (snap.bids.size() == n_levels) break;
    std::int64_t vol = 0;
    for (const Resting& r : queue) vol += r.remaining;
    snap.bids.push_back({price, vol});
  }
  for (const auto& [price, queue] : asks_) {
    if (snap.asks.size() == n_levels) break;
    std::int64_t vol = 0;
    for (const Resting& r : queue) vol += r.remaining;
    snap.asks.push_back({price, vol});
  }
  return snap;
}

std::optional<Price> OrderBook::best_bid() const {
  if (bids_.empty()) return std::nullopt;
  return bids_.begin()->first;
}

std::optional<Price> OrderBook::best_ask() const {
  if (asks_.empty()) return std::nullopt;
  return asks_.begin()->first;
}

std::optional<double> OrderBook::mid() const {
  const auto bid = best_bid();
  const auto ask = best_ask();
  if (!bid || !ask) return std::nullopt;
  return (static_cast<double>(*bid) + static_cast<double>(*ask)) / 2.0;
}

std::int64_t OrderBook::resting_volume(Side side) const {
  std::int64_t total = 0;
  if (side == Side::Buy) {
    for (const auto& [p, q] : bids_)
      for (const Resting& r : q) total += r.remaining;
  } else {
    for (const auto& [p, q] : asks_)
      for (const Resting& r : q) total += r.remaining;
  }
  return total;
}

SubmitResult ReferenceBook::submit_limit_order(const Order& order) {
  validate(order);
  for (const Entry& e : resting_) {
    if (e.order.id == order.id) {
      throw std::invalid_argument("duplicate order id " + std::to_string(order.id));
    }
  }

  SubmitResult result;
  std::int64_t remaining = order.size;
  while (remaining > 0) {
    // Scan for the best counterparty: price priority, then arrival order.
    Entry* best = nullptr;
    for (Entry& e : resting_) {
      if (e.order.side == order.side) continue;
      const bool crosses = order.side == Side::Buy ? e.order.price <= order.price
                                                   : e.order.price >= order.price;
      if (!crosses) continue;
      if (!best) {
        best = &e;
        continue;
      }
      const bool better_price = order.side == Side::Buy ? e.order.price < best->order.price
                                                        : e.order.price > best->order.price;
      if (better_price || (e.order.price == best->order.price && e.arrival < best->arrival)) {
        best = &e;
      }
    }
    if (!best) break;
    const std::int64_t fill = std::min(remaining, best->remaining);
    Trade trade;
    trade.time = order.time;
    trade.price = best->order.price;
    trade.size = fill;
    trade.aggressor = order.side;
    trade.maker_order = best->order.id;
    trade.taker_order = order.id;
    if (order.side == Side::Buy) {
      trade.buyer = order.agent;
      trade.seller = best->order.agent;
    } else {
      trade.buyer = best->order.agent;
      trade.seller = order.agent;
    }
    result.trades.push_back(trade);
    remaining -= fill;
    best->remaining -= fill;
    if (best->remaining == 0) {
      resting_.erase(resting_.begin() + (best - resting_.data()));
    }
  }

  if (remaining > 0) {
    resting_.push_back({order, remaining, arrivals_++});
    result.rested = true;
    result.resting_size = remaining;
  }
  return result;
}

std::int64_t ReferenceBook::cancel_order(std::int64_t order_id) {
  for (auto it = resting_.begin(); it != resting_.end(); ++it) {
    if (it->order.id == order_id) {
      const std::int64_t remaining = it->remaining;
      resting_.erase(it);
      return remaining;
    }
  }
  return 0;
}

LobSnapshot ReferenceBook::snapshot(std::size_t n_levels) const {
  std::map<Price, std::int64_t, std::greater<Price>> bid_levels;
  std::map<Price, std::int64_t> ask_levels;
  for (const Entry& e : resting_) {
    if (e.order.side == Side::Buy) {
      bid_levels[e.order.price] += e.remaining;
    } else {
      ask_levels[e.order.price] += e.remaining;
    }
  }
  LobSnapshot snap;
  for (const auto& [p, v] : bid_levels) {
    if (snap.bids.size() == n_levels) break;
    snap.bids.push_back({p, v});
  }
  for (const auto& [p, v] : ask_levels) {
    if (snap.asks.size() == n_levels) break;
    snap.asks.push_back({p, v});
  }
  return snap;
}

}  // namespace msim
