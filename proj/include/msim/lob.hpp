#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "msim/types.hpp"

namespace msim {

struct Order {
  std::int64_t id = 0;
  std::int32_t agent = -1;
  Side side = Side::Buy;
  Price price = 0;   // limit price in half-cent units, > 0
  std::int64_t size = 0;  // shares, > 0
  Timestamp time = 0;
};

// Executions happen at the resting order's limit price.
struct Trade {
  Timestamp time = 0;
  Price price = 0;
  std::int64_t size = 0;
  std::int32_t buyer = -1;
  std::int32_t seller = -1;
  Side aggressor = Side::Buy;
  std::int64_t maker_order = 0;  // resting order id
  std::int64_t taker_order = 0;  // incoming order id
};

struct LobLevel {
  Price price = 0;
  std::int64_t volume = 0;
};

// Top-n aggregated view of the book. Bids descending, asks ascending.
struct LobSnapshot {
  std::vector<LobLevel> bids;
  std::vector<LobLevel> asks;
};

struct SubmitResult {
  std::vector<Trade> trades;
  bool rested = false;       // residue left on the book
  std::int64_t resting_size = 0;
};

// Price-time-priority limit order book with FIFO matching within a level.
// Single-writer; snapshots are value copies and freely shareable.
class OrderBook {
 public:
  // Matches the incoming order while marketable, walking the opposite side in
  // price priority and FIFO within each level; any residue rests at its limit.
  // Throws std::invalid_argument on malformed orders or duplicate ids.
  SubmitResult submit_limit_order(const Order& order);

  // Removes a resting order. Returns the remaining (cancelled) size,
  // 0 if the order is absent or already fully filled. Idempotent.
  std::int64_t cancel_order(std::int64_t order_id);

  LobSnapshot snapshot(std::size_t n_levels) const;

  std::optional<Price> best_bid() const;
  std::optional<Price> best_ask() const;
  // (best_bid + best_ask) / 2; empty when either side is empty.
  std::optional<double> mid() const;

  std::int64_t resting_volume(Side side) const;
  bool empty() const { return bids_.empty() && asks_.empty(); }

 private:
  struct Resting {
    std::int64_t id;
    std::int32_t agent;
    std::int64_t remaining;
    Timestamp time;
  };
  using Level = std::deque<Resting>;

  std::map<Price, Level, std::greater<Price>> bids_;
  std::map<Price, Level> asks_;
  // id -> (side, price) for O(log n) cancels.
  std::map<std::int64_t, std::pair<Side, Price>> index_;
};

// Naive O(n^2) reference matcher used as the oracle for the book above:
// identical contract, no data structures beyond a flat resting list.
class ReferenceBook {
 public:
  SubmitResult submit_limit_order(const Order& order);
  std::int64_t cancel_order(std::int64_t order_id);
  LobSnapshot snapshot(std::size_t n_levels) const;

 private:
  struct Entry {
    Order order;
    std::int64_t remaining;
    std::uint64_t arrival;  // FIFO rank, preserved across partial fills
  };
  std::vector<Entry> resting_;
  std::uint64_t arrivals_ = 0;
};

}  // namespace msim
