#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "msim/types.hpp"

namespace msim {

// Discrete-time mean-reverting Ornstein-Uhlenbeck parameters.
// Units: price in half-cent units, time in minutes.
struct OUParams {
  double mean = 200000.0;   // $1000.00
  double kappa = 0.05;      // per-minute reversion fraction, in [0, 1]
  double sigma = 20.0;      // shock stddev, units per sqrt(minute)
  double initial = 200000.0;
};

// Exogenous per-minute fundamental value series covering one trading day.
class FundamentalPath {
 public:
  FundamentalPath() = default;
  explicit FundamentalPath(std::vector<double> values) : values_(std::move(values)) {}

  double at(int minute) const { return values_.at(static_cast<std::size_t>(minute)); }
  int length() const { return static_cast<int>(values_.size()); }
  const std::vector<double>& values() const { return values_; }

  // Single-column CSV with a "fundamental" header, for scenario replay.
  void to_csv(const std::string& path) const;
  static FundamentalPath from_csv(const std::string& path);

 private:
  std::vector<double> values_;
};

enum class ScenarioShape { SineWave, TrendWithShock, MonotoneDecline };

struct ScenarioKind {
  ScenarioShape shape = ScenarioShape::SineWave;
  // SineWave
  double amplitude = 0.005;
  double periods = 1.0;
  // TrendWithShock
  double slope = 0.01;          // total fractional rise over the day
  double shock_depth = 0.01;    // fractional drop at the bottom of the dip
  int shock_start = 130;        // minutes, inclusive
  int shock_end = 260;          // minutes, exclusive
  // MonotoneDecline
  double drop = 0.02;           // total fractional decline over the day
};

// r_{t+1} = r_t + kappa * (mean - r_t) + sigma * eps_t, eps_t ~ N(0,1).
FundamentalPath generate_ou_path(const OUParams& params, int minutes, std::uint64_t seed);

// Hand-crafted deterministic scenario paths (no RNG dependence).
// All shapes start at `base`; SineWave also closes at `base`.
FundamentalPath generate_crafted_path(const ScenarioKind& kind, double base, int minutes);

// Noisy observation of the fundamental at minute t, rounded to the nearest
// price unit and floored at 1.
Price observe_noisy(const FundamentalPath& path, int minute, double obs_stddev,
                    std::mt19937_64& rng);

}  // namespace msim
