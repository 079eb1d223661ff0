#include "msim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "msim/sim.hpp"

namespace msim {

namespace {

constexpr std::array<std::string_view, StateVector::kFeatures> kFeatureNames = {
    "cash",       "holdings",   "mom1",      "mom10",     "mom30",
    "spread",     "depth",      "vol30",     "quote_count", "quote_dist",
    "quote_vol",  "trade_vol",  "trade_dist", "trade_net",
};

}  // namespace

double StateVector::feature(int i) const {
  switch (i) {
    case 0: return cash;
    case 1: return holdings;
    case 2: return mom1;
    case 3: return mom10;
    case 4: return mom30;
    case 5: return spread;
    case 6: return depth;
    case 7: return vol30;
    case 8: return quote_count;
    case 9: return quote_dist;
    case 10: return quote_vol;
    case 11: return trade_vol;
    case 12: return trade_dist;
    case 13: return trade_net;
    default: throw std::out_of_range("feature index");
  }
}

void StateVector::set_feature(int i, double v) {
  switch (i) {
    case 0: cash = v; break;
    case 1: holdings = v; break;
    case 2: mom1 = v; break;
    case 3: mom10 = v; break;
    case 4: mom30 = v; break;
    case 5: spread = v; break;
    case 6: depth = v; break;
    case 7: vol30 = v; break;
    case 8: quote_count = v; break;
    case 9: quote_dist = v; break;
    case 10: quote_vol = v; break;
    case 11: trade_vol = v; break;
    case 12: trade_dist = v; break;
    case 13: trade_net = v; break;
    default: throw std::out_of_range("feature index");
  }
}

std::string_view StateVector::feature_name(int i) {
  return kFeatureNames.at(static_cast<std::size_t>(i));
}

LobMetrics lob_metrics(const LobSnapshot& snapshot) {
  LobMetrics m;
  const bool has_bid = !snapshot.bids.empty();
  const bool has_ask = !snapshot.asks.empty();
  if (has_bid && has_ask) {
    const Price bb = snapshot.bids.front().price;
    const Price ba = snapshot.asks.front().price;
    m.mid = (static_cast<double>(bb) + static_cast<double>(ba)) / 2.0;
    m.spread = ba - bb;
    m.depth = snapshot.asks.back().price - snapshot.bids.back().price;
  }
  std::int64_t bid_vol = 0, ask_vol = 0;
  for (const LobLevel& l : snapshot.bids) bid_vol += l.volume;
  for (const LobLevel& l : snapshot.asks) ask_vol += l.volume;
  if (bid_vol + ask_vol > 0) {
    m.imbalance = static_cast<double>(bid_vol) / static_cast<double>(bid_vol + ask_vol);
  }
  return m;
}

double population_stddev(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

SeriesMetrics series_metrics(const std::vector<double>& prices, int t, int delta) {
  SeriesMetrics out;
  if (delta <= 0 || t < delta || t >= static_cast<int>(prices.size())) return out;
  const double past = prices[static_cast<std::size_t>(t - delta)];
  if (past > 0.0) out.momentum = prices[static_cast<std::size_t>(t)] / past;
  std::vector<double> window(prices.begin() + (t - delta), prices.begin() + t + 1);
  out.sigma = population_stddev(window);
  return out;
}

double relative_effective_spread(double traded_price, double mid) {
  if (mid <= 0.0) throw std::invalid_argument("mid must be positive");
  return (traded_price - mid) / mid;
}

StateVector build_state_vector(Money cash, std::int64_t holdings,
                               const std::vector<double>& traded, int minute,
                               double spread, double depth,
                               const OwnQuoteSummary& quotes,
                               const OwnTradeSummary& trades) {
  StateVector s;
  s.cash = units_to_cents(cash);
  s.holdings = static_cast<double>(holdings);
  s.mom1 = series_metrics(traded, minute, 1).momentum;
  s.mom10 = series_metrics(traded, minute, 10).momentum;
  const SeriesMetrics m30 = series_metrics(traded, minute, 30);
  s.mom30 = m30.momentum;
  s.vol30 = m30.sigma;
  s.spread = spread;
  s.depth = depth;
  s.quote_count = quotes.count;
  s.quote_dist = quotes.mean_dist;
  s.quote_vol = quotes.volume;
  s.trade_vol = trades.volume;
  s.trade_dist = trades.mean_dist;
  s.trade_net = trades.net;
  return s;
}

MarketQualityReport daily_quality_report(const DayLog& log, const FundamentalPath& path) {
  MarketQualityReport rep;

  // Liquidity: time-averaged quoted spread and per-trade effective spread.
  double spread_sum = 0.0;
  int spread_n = 0;
  for (const MinuteRow& row : log.minutes) {
    if (row.best_bid && row.best_ask) {
      spread_sum += static_cast<double>(*row.best_ask - *row.best_bid);
      ++spread_n;
    }
  }
  if (spread_n > 0) rep.mean_spread = spread_sum / spread_n;

  double res_sum = 0.0;
  int res_n = 0;
  for (const TradeRec& tr : log.trades) {
    rep.total_volume += static_cast<double>(tr.trade.size);
    if (tr.mid_before > 0.0) {
      res_sum += std::abs(relative_effective_spread(
          static_cast<double>(tr.trade.price), tr.mid_before));
      ++res_n;
    }
  }
  if (res_n > 0) rep.mean_abs_res = res_sum / res_n;

  // Volatility family needs a live traded-price series.
  if (log.trades.size() >= 2) {
    std::vector<double> rets30;
    double lo = 0.0, hi = 0.0;
    bool have_px = false;
    std::vector<int> traded_minutes;
    std::vector<double> traded_px;
    for (const MinuteRow& row : log.minutes) {
      if (!row.traded) continue;
      traded_minutes.push_back(row.minute);
      traded_px.push_back(static_cast<double>(*row.traded));
      if (!have_px) {
        lo = hi = static_cast<double>(*row.traded);
        have_px = true;
      } else {
        lo = std::min(lo, static_cast<double>(*row.traded));
        hi = std::max(hi, static_cast<double>(*row.traded));
      }
    }
    for (std::size_t i = 0; i < traded_px.size(); ++i) {
      // find the entry exactly 30 minutes back (series is carried forward, so
      // consecutive minutes from the first trade onward)
      if (traded_minutes[i] < 30) continue;
      const int want = traded_minutes[i] - 30;
      const int first = traded_minutes.front();
      if (want < first) continue;
      const std::size_t j = i - 30;
      if (traded_px[j] > 0.0) rets30.push_back(traded_px[i] / traded_px[j]);
    }
    if (!rets30.empty()) rep.std30_ret = population_stddev(rets30);
    rep.price_range = hi - lo;

    const double open = static_cast<double>(log.trades.front().trade.price);
    const double close = static_cast<double>(log.trades.back().trade.price);
    if (open > 0.0) rep.abs_ret = std::abs(close / open - 1.0);
  }

  // Lag-1 autocorrelation of 1-minute mid returns.
  {
    std::vector<double> rets;
    std::optional<double> prev_mid;
    int prev_minute = -2;
    for (const MinuteRow& row : log.minutes) {
      if (row.mid) {
        if (prev_mid && row.minute == prev_minute + 1 && *prev_mid > 0.0) {
          rets.push_back(*row.mid / *prev_mid - 1.0);
        } else if (prev_mid && row.minute != prev_minute + 1) {
          rets.push_back(std::numeric_limits<double>::quiet_NaN());  // gap marker
        }
        prev_mid = *row.mid;
        prev_minute = row.minute;
      }
    }
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    int n = 0;
    for (std::size_t i = 0; i + 1 < rets.size(); ++i) {
      if (std::isnan(rets[i]) || std::isnan(rets[i + 1])) continue;
      const double x = rets[i], y = rets[i + 1];
      sx += x; sy += y; sxx += x * x; syy += y * y; sxy += x * y;
      ++n;
    }
    if (n >= 2) {
      const double cov = sxy - sx * sy / n;
      const double vx = sxx - sx * sx / n;
      const double vy = syy - sy * sy / n;
      if (vx > 0.0 && vy > 0.0) rep.autocorr1 = cov / std::sqrt(vx * vy);
    }
  }

  // Information efficiency: traded price tracking the fundamental.
  {
    double sum_rel = 0.0, sum_abs = 0.0;
    int n = 0;
    for (const MinuteRow& row : log.minutes) {
      if (!row.traded || row.minute >= path.length()) continue;
      const double fp = path.at(row.minute);
      if (fp <= 0.0) continue;
      const double diff = std::abs(static_cast<double>(*row.traded) - fp);
      sum_rel += diff / fp;
      sum_abs += diff;
      ++n;
    }
    if (n > 0) {
      rep.efficiency = sum_rel / n;
      rep.mean_abs_tp_fp = sum_abs / n;
    }
  }

  return rep;
}

}  // namespace msim
