#include "msim/fundamental.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace msim {

void FundamentalPath::to_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "fundamental\n";
  char buf[64];
  for (double v : values_) {
    std::snprintf(buf, sizeof(buf), "%.10g\n", v);
    out << buf;
  }
}

FundamentalPath FundamentalPath::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "fundamental") {
    throw std::runtime_error(path + ": expected single-column header 'fundamental'");
  }
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    values.push_back(std::stod(line));
  }
  return FundamentalPath(std::move(values));
}

FundamentalPath generate_ou_path(const OUParams& params, int minutes, std::uint64_t seed) {
  if (!std::isfinite(params.mean) || !std::isfinite(params.kappa) ||
      !std::isfinite(params.sigma) || !std::isfinite(params.initial)) {
    throw std::invalid_argument("non-finite OU parameter");
  }
  if (params.kappa < 0.0 || params.kappa > 1.0) {
    throw std::invalid_argument("OU kappa must lie in [0, 1]");
  }
  if (params.sigma < 0.0) throw std::invalid_argument("OU sigma must be nonnegative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(minutes));
  double r = params.initial;
  for (int t = 0; t < minutes; ++t) {
    if (t > 0) {
      r += params.kappa * (params.mean - r);
      if (params.sigma > 0.0) r += params.sigma * normal(rng);
      if (r < 1.0) r = 1.0;
    }
    values.push_back(r);
  }
  return FundamentalPath(std::move(values));
}

FundamentalPath generate_crafted_path(const ScenarioKind& kind, double base, int minutes) {
  if (minutes <= 1) throw std::invalid_argument("crafted path needs at least 2 minutes");
  const double span = static_cast<double>(minutes - 1);
  std::vector<double> values(static_cast<std::size_t>(minutes));

  switch (kind.shape) {
    case ScenarioShape::SineWave:
      // Phase spans whole periods across [0, minutes-1] so the day opens and
      // closes at exactly `base`.
      for (int t = 0; t < minutes; ++t) {
        values[static_cast<std::size_t>(t)] =
            base * (1.0 + kind.amplitude *
                              std::sin(2.0 * std::numbers::pi * kind.periods * t / span));
      }
      break;
    case ScenarioShape::TrendWithShock: {
      if (kind.shock_start >= kind.shock_end || kind.shock_start < 0 ||
          kind.shock_end > minutes) {
        throw std::invalid_argument("degenerate shock window");
      }
      for (int t = 0; t < minutes; ++t) {
        const double trend = base * (1.0 + kind.slope * t / span);
        double multiplier = 1.0;
        if (t >= kind.shock_start && t < kind.shock_end) {
          // V-shaped dip: down to (1 - depth) at the window midpoint, back up.
          const double u = static_cast<double>(t - kind.shock_start) /
                           static_cast<double>(kind.shock_end - kind.shock_start);
          multiplier = 1.0 - kind.shock_depth * (1.0 - std::abs(2.0 * u - 1.0));
        }
        values[static_cast<std::size_t>(t)] = trend * multiplier;
      }
      break;
    }
    case ScenarioShape::MonotoneDecline:
      for (int t = 0; t < minutes; ++t) {
        values[static_cast<std::size_t>(t)] = base * (1.0 - kind.drop * t / span);
      }
      break;
  }
  return FundamentalPath(std::move(values));
}

Price observe_noisy(const FundamentalPath& path, int minute, double obs_stddev,
                    std::mt19937_64& rng) {
  double value = path.at(minute);
  if (obs_stddev > 0.0) {
    std::normal_distribution<double> noise(0.0, obs_stddev);
    value += noise(rng);
  }
  auto price = static_cast<Price>(std::llround(value));
  return price < 1 ? 1 : price;
}

}  // namespace msim
