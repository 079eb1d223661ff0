#include "msim/explain.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "msim/model.hpp"

namespace msim {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void check_inputs(const std::vector<double>& state,
                  const std::vector<std::vector<double>>& background) {
  if (state.empty()) throw std::invalid_argument("shapley: state has no features");
  if (background.empty()) throw std::invalid_argument("shapley: background set is empty");
  for (const auto& row : background)
    if (row.size() != state.size())
      throw std::invalid_argument(
          "shapley: feature-count mismatch between state (" +
          std::to_string(state.size()) + ") and background row (" +
          std::to_string(row.size()) + ")");
}

double background_mean(const PolicyFn& policy,
                       const std::vector<std::vector<double>>& background) {
  double sum = 0.0;
  for (const auto& row : background) sum += policy(row);
  return sum / double(background.size());
}

}  // namespace

std::vector<double> policy_features(const StateVector& s) {
  // model_features appends the traded mark; the policy only sees the
  // observation itself
  const auto f = model_features(s, 0.0);
  return std::vector<double>(f.begin(), f.begin() + StateVector::kFeatures);
}

PolicyFn make_policy_direction_fn(const QTable& table, const DiscretizationSpec& spec,
                                  const SubrationalityProfile& profile) {
  validate(profile);
  // the function object gets copied around freely; share one table
  auto shared = std::make_shared<const QTable>(table);
  return [shared, spec, profile](const std::vector<double>& x) -> double {
    if (x.size() != std::size_t(StateVector::kFeatures))
      throw std::invalid_argument("policy: expected " +
                                  std::to_string(StateVector::kFeatures) +
                                  " features, got " + std::to_string(x.size()));
    std::array<double, kModelFeatures> f{};
    std::copy(x.begin(), x.end(), f.begin());
    const std::uint32_t disc = spec.discretize(state_from_features(f));
    const QTable::Row row = shared->get_row(disc);
    if (const auto* b = std::get_if<Bounded>(&profile)) {
      const auto probs = boltzmann_policy(std::vector<double>(row.begin(), row.end()),
                                          b->beta);
      double dir = 0.0;
      for (int a = 0; a < kNumActions; ++a)
        dir += probs[std::size_t(a)] * double(action_direction(a));
      return dir;
    }
    return double(action_direction(greedy_action(row)));
  };
}

Attribution shapley_attribution(const PolicyFn& policy, const std::vector<double>& state,
                                const std::vector<std::vector<double>>& background,
                                int n_permutations, std::mt19937_64& rng) {
  check_inputs(state, background);
  if (n_permutations < 1)
    throw std::invalid_argument("shapley: n_permutations must be >= 1");

  const std::size_t nf = state.size();
  Attribution out;
  out.values.assign(nf, 0.0);
  out.base = background_mean(policy, background);

  std::vector<std::size_t> perm(nf);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::uniform_int_distribution<std::size_t> pick(0, background.size() - 1);
  std::vector<double> x;
  for (int draw = 0; draw < n_permutations; ++draw) {
    x = background[pick(rng)];
    std::shuffle(perm.begin(), perm.end(), rng);
    // walk the reference toward the actual state; each feature is credited
    // with the change it causes, and the walk telescopes to f(state) - f(ref)
    double prev = policy(x);
    for (const std::size_t j : perm) {
      x[j] = state[j];
      const double cur = policy(x);
      out.values[j] += cur - prev;
      prev = cur;
    }
  }
  for (auto& v : out.values) v /= double(n_permutations);
  return out;
}

Attribution shapley_exact(const PolicyFn& policy, const std::vector<double>& state,
                          const std::vector<std::vector<double>>& background) {
  check_inputs(state, background);
  const int nf = int(state.size());
  if (nf > 12)
    throw std::invalid_argument("shapley_exact: " + std::to_string(nf) +
                                " features need 2^" + std::to_string(nf) +
                                " coalitions; use shapley_attribution instead");

  // value of each coalition, averaged over the background references
  const std::uint32_t ncoal = 1u << nf;
  std::vector<double> value(ncoal, 0.0);
  std::vector<double> x;
  for (const auto& ref : background) {
    for (std::uint32_t mask = 0; mask < ncoal; ++mask) {
      x = ref;
      for (int j = 0; j < nf; ++j)
        if (mask & (1u << j)) x[std::size_t(j)] = state[std::size_t(j)];
      value[mask] += policy(x);
    }
  }
  for (auto& v : value) v /= double(background.size());

  // w(s) = s! (n-1-s)! / n!
  std::vector<double> factorial(std::size_t(nf) + 1, 1.0);
  for (int k = 1; k <= nf; ++k)
    factorial[std::size_t(k)] = factorial[std::size_t(k - 1)] * double(k);
  std::vector<double> weight(std::size_t(nf), 0.0);
  for (int s = 0; s < nf; ++s)
    weight[std::size_t(s)] =
        factorial[std::size_t(s)] * factorial[std::size_t(nf - 1 - s)] /
        factorial[std::size_t(nf)];

  Attribution out;
  out.values.assign(std::size_t(nf), 0.0);
  out.base = value[0];
  for (std::uint32_t mask = 0; mask < ncoal; ++mask) {
    const int size = std::popcount(mask);
    for (int j = 0; j < nf; ++j) {
      if (mask & (1u << j)) continue;
      out.values[std::size_t(j)] +=
          weight[std::size_t(size)] * (value[mask | (1u << j)] - value[mask]);
    }
  }
  return out;
}

AttributionReport global_importance(const PolicyFn& policy,
                                    const std::vector<std::vector<double>>& states,
                                    const std::vector<std::vector<double>>& background,
                                    int n_permutations, std::uint64_t seed) {
  if (states.empty())
    throw std::invalid_argument("global_importance: evaluation set is empty");
  const std::size_t nf = states.front().size();

  AttributionReport report;
  report.local.reserve(states.size());
  report.importance.assign(nf, 0.0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::mt19937_64 rng(mix64(seed, i));
    Attribution a = shapley_attribution(policy, states[i], background,
                                        n_permutations, rng);
    report.base = a.base;
    for (std::size_t j = 0; j < nf; ++j)
      report.importance[j] += std::abs(a.values[j]) / double(states.size());
    report.local.push_back(std::move(a.values));
  }

  report.ranking.resize(nf);
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
    return report.importance[std::size_t(a)] > report.importance[std::size_t(b)];
  });
  return report;
}

void write_shap_local(std::ostream& os, const AttributionReport& report,
                      const std::vector<std::vector<double>>& states,
                      const std::vector<std::string>& names, std::string_view run) {
  if (states.size() != report.local.size())
    throw std::invalid_argument("write_shap_local: state/attribution count mismatch");
  os << "state,feature,value,raw,run\n";
  for (std::size_t i = 0; i < report.local.size(); ++i) {
    const auto& values = report.local[i];
    for (std::size_t j = 0; j < values.size(); ++j)
      os << i << ',' << names.at(j) << ',' << fmt(values[j]) << ','
         << fmt(states[i].at(j)) << ',' << run << '\n';
  }
}

void write_shap_global(std::ostream& os, const AttributionReport& report,
                       const std::vector<std::string>& names, std::string_view run) {
  os << "feature,importance,run\n";
  for (const int j : report.ranking)
    os << names.at(std::size_t(j)) << ',' << fmt(report.importance[std::size_t(j)])
       << ',' << run << '\n';
}

}  // namespace msim
