#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "msim/metrics.hpp"
#include "msim/rl.hpp"

namespace msim {

// ---------------------------------------------------------------------------
// Policy as a scalar decision value
// ---------------------------------------------------------------------------
// A policy collapsed to a single number in [-1, 1]: -1 sell, 0 hold, +1 buy.
// Greedy investors report the direction of their chosen action; the Boltzmann
// investor reports the expected direction under its action distribution, so
// the function stays deterministic and the efficiency axiom is testable.
//
// Attribution works over plain feature vectors so the same machinery runs on
// small hand-built test policies and on the full 14-feature observation.
using PolicyFn = std::function<double(const std::vector<double>&)>;

// The observation as an attribution-ready feature vector (kFeatures entries,
// same order as StateVector::feature_name).
std::vector<double> policy_features(const StateVector& s);

// Wraps a trained table as a PolicyFn over the 14 observation features.
// Throws std::invalid_argument on an invalid profile.
PolicyFn make_policy_direction_fn(const QTable& table, const DiscretizationSpec& spec,
                                  const SubrationalityProfile& profile);

// ---------------------------------------------------------------------------
// Shapley attribution
// ---------------------------------------------------------------------------
struct Attribution {
  std::vector<double> values;  // one Shapley value per feature
  double base = 0.0;           // mean policy output over the background set
};

// Monte-Carlo permutation estimate with background imputation: each draw
// picks a background reference and a feature order, then walks the features
// from reference to actual values, crediting each with its marginal change.
// Throws std::invalid_argument on an empty background, n < 1, or a
// feature-count mismatch between the state and any background row.
Attribution shapley_attribution(const PolicyFn& policy, const std::vector<double>& state,
                                const std::vector<std::vector<double>>& background,
                                int n_permutations, std::mt19937_64& rng);

// Exhaustive coalition enumeration; exact but exponential, so it refuses
// states with more than 12 features.
Attribution shapley_exact(const PolicyFn& policy, const std::vector<double>& state,
                          const std::vector<std::vector<double>>& background);

struct AttributionReport {
  std::vector<std::vector<double>> local;  // [state][feature]
  std::vector<double> importance;          // mean |value| per feature
  std::vector<int> ranking;                // feature indices, importance descending
  double base = 0.0;
};

// Attribution of every evaluation state against the shared background. State
// i draws from its own generator seeded with mix64(seed, i), so results do
// not depend on evaluation order.
AttributionReport global_importance(const PolicyFn& policy,
                                    const std::vector<std::vector<double>>& states,
                                    const std::vector<std::vector<double>>& background,
                                    int n_permutations, std::uint64_t seed);

// CSV exports; names[j] labels feature j and `run` tags every row.
// shap_local: state,feature,value,raw,run  (one row per state x feature)
// shap_global: feature,importance,run      (sorted by importance, descending)
void write_shap_local(std::ostream& os, const AttributionReport& report,
                      const std::vector<std::vector<double>>& states,
                      const std::vector<std::string>& names, std::string_view run);
void write_shap_global(std::ostream& os, const AttributionReport& report,
                       const std::vector<std::string>& names, std::string_view run);

}  // namespace msim
