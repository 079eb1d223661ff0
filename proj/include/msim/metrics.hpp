#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msim/lob.hpp"
#include "msim/types.hpp"

namespace msim {

struct DayLog;
class FundamentalPath;

// Continuous per-minute observation of an investor. Scales: cash in cents,
// holdings in shares, momenta as ratios, spread/depth/volatility/distances in
// price units, volumes in shares.
struct StateVector {
  double cash = 0.0;
  double holdings = 0.0;
  double mom1 = 1.0;
  double mom10 = 1.0;
  double mom30 = 1.0;
  double spread = 0.0;
  double depth = 0.0;
  double vol30 = 0.0;
  // Own open quotes placed within the past 5 minutes.
  double quote_count = 0.0;
  double quote_dist = 0.0;
  double quote_vol = 0.0;
  // Own executions within the past 5 minutes.
  double trade_vol = 0.0;
  double trade_dist = 0.0;
  double trade_net = 0.0;

  static constexpr int kFeatures = 14;
  double feature(int i) const;
  void set_feature(int i, double v);
  static std::string_view feature_name(int i);
};

// Per-side undefined components are nullopt; the caller carries forward the
// last defined value where it needs continuity.
struct LobMetrics {
  std::optional<double> mid;
  std::optional<Price> spread;
  std::optional<Price> depth;       // worst ask - worst bid
  std::optional<double> imbalance;  // bid volume / total volume
};

LobMetrics lob_metrics(const LobSnapshot& snapshot);

struct SeriesMetrics {
  double momentum = 1.0;
  double sigma = 0.0;
};

// momentum = p(t)/p(t-delta); sigma = population stddev of p[t-delta..t].
// Insufficient history falls back to the warm-up convention (1.0, 0.0).
SeriesMetrics series_metrics(const std::vector<double>& prices, int t, int delta);

// (traded - mid) / mid, signed. Callers aggregate |RES|.
double relative_effective_spread(double traded_price, double mid);

struct OwnQuoteSummary {
  double count = 0.0;
  double mean_dist = 0.0;  // |limit - mid| in price units
  double volume = 0.0;
};

struct OwnTradeSummary {
  double volume = 0.0;
  double mean_dist = 0.0;  // |fill price - mid at fill|
  double net = 0.0;        // buys positive, sells negative
};

// Assembles the full observation. `traded` is the per-minute mark series up
// to and including `minute`; spread/depth are already carried forward by the
// caller when the book is one-sided.
StateVector build_state_vector(Money cash, std::int64_t holdings,
                               const std::vector<double>& traded, int minute,
                               double spread, double depth,
                               const OwnQuoteSummary& quotes,
                               const OwnTradeSummary& trades);

// One day of market quality, the eight reporting metrics. Optional fields are
// undefined when the day had fewer than two trades (or constant series for
// the autocorrelation).
struct MarketQualityReport {
  std::optional<double> mean_spread;    // price units, over defined minutes
  std::optional<double> mean_abs_res;   // per trade with a defined pre-trade mid
  double total_volume = 0.0;            // shares
  std::optional<double> std30_ret;      // std of p(t)/p(t-30) per minute
  std::optional<double> price_range;    // max traded - min traded
  std::optional<double> abs_ret;        // |close/open - 1|
  std::optional<double> autocorr1;      // lag-1 AC of 1-minute mid returns
  std::optional<double> efficiency;     // mean |TP-FP|/FP over traded minutes
  std::optional<double> mean_abs_tp_fp; // unnormalized companion to the above
};

MarketQualityReport daily_quality_report(const DayLog& log, const FundamentalPath& path);

// population stddev (helper shared by several metrics)
double population_stddev(const std::vector<double>& xs);

}  // namespace msim
