#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msim/market.hpp"
#include "msim/metrics.hpp"
#include "msim/rl.hpp"

namespace msim {

// The belief model works over the investor observation plus the traded mark,
// so a predicted successor carries everything needed to re-price a portfolio.
// Alongside the successor features the regressor predicts the step reward as
// its own output: recomputing it from independently-sampled diagonal
// coordinates would decorrelate cash against holdings and blow up its noise.
constexpr int kModelFeatures = StateVector::kFeatures + 1;
constexpr int kModelOutputs = kModelFeatures + 1;           // + reward head
constexpr int kModelInputs = kModelFeatures + kNumActions;  // + one-hot action

std::array<double, kModelFeatures> model_features(const StateVector& s, double mark);
StateVector state_from_features(const std::array<double, kModelFeatures>& f);
std::string_view model_feature_name(int i);

// The feature block of a sampled successor (drops the reward entry).
inline std::array<double, kModelFeatures> successor_features(
    const std::array<double, kModelOutputs>& o) {
  std::array<double, kModelFeatures> f{};
  for (int i = 0; i < kModelFeatures; ++i) f[std::size_t(i)] = o[std::size_t(i)];
  return f;
}

// cash is carried in cents inside the observation; marks are price units, so
// the portfolio value in half-cent units is 2*cash + holdings*mark.
inline double portfolio_value(const std::array<double, kModelFeatures>& f) {
  return 2.0 * f[0] + f[1] * f[kModelFeatures - 1];
}

struct TransitionSample {
  StateVector state;
  double mark = 0.0;  // traded mark at the decision minute, price units
  int action = 0;
  StateVector next_state;
  double next_mark = 0.0;
  Money reward = 0;  // half-cent units, equals the portfolio-value difference
};

// Runs n_days independent days with a uniformly random investor and records
// one sample per minute (minutes * n_days in total). Day d uses seed
// mix64(seed, d), matching the paired-day convention used everywhere else.
std::vector<TransitionSample> collect_transitions(const MarketConfig& cfg, int n_days,
                                                  std::uint64_t seed);

struct MlpConfig {
  int hidden = 64;
  int epochs = 300;
  int batch = 64;
  double lr = 1e-3;           // drops to a tenth for the last 30% of epochs
  double weight_decay = 0.0; // decoupled, weights only
};

// Fully-connected regressor with a diagonal-Gaussian head: two ReLU layers,
// then one linear layer emitting a mean and a softplus-floored variance per
// output. Operates entirely in normalized space; the ensemble owns the
// feature scaling.
class GaussianMlp {
 public:
  void init(int inputs, int outputs, int hidden, std::mt19937_64& rng);
  // x is inputs-by-n (columns are samples); outputs are outputs-by-n.
  void forward(const Eigen::MatrixXd& x, Eigen::MatrixXd& mean,
               Eigen::MatrixXd& var) const;
  // Adam on the Gaussian negative log-likelihood; returns the last epoch's
  // mean per-sample NLL.
  double fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const MlpConfig& cfg,
             std::mt19937_64& rng);

  void write(std::ostream& out) const;
  static GaussianMlp read(std::istream& in);

  int inputs() const { return w1_.cols() > 0 ? static_cast<int>(w1_.cols()) : 0; }
  int outputs() const { return static_cast<int>(w3_.rows()) / 2; }

 private:
  Eigen::MatrixXd w1_, w2_, w3_;
  Eigen::VectorXd b1_, b2_, b3_;
};

class EnsembleModel {
 public:
  // Predictive distribution over [next features..., reward], raw scales.
  struct Gaussian {
    std::array<double, kModelOutputs> mean{};
    std::array<double, kModelOutputs> var{};
  };

  bool fitted() const { return !nets_.empty(); }
  int members() const { return static_cast<int>(nets_.size()); }

  Gaussian member_predict(int member, const StateVector& s, double mark,
                          int action) const;
  std::vector<Gaussian> predict(const StateVector& s, double mark, int action) const;
  // Uniform-mixture moments via the law of total variance.
  Gaussian mixture(const StateVector& s, double mark, int action) const;
  // Draws a member uniformly, then a Gaussian sample, then clamps every
  // output to its training range and holdings to +/- the order size.
  std::array<double, kModelOutputs> sample(const StateVector& s, double mark,
                                           int action, std::mt19937_64& rng) const;

  const std::vector<std::vector<std::uint32_t>>& bootstrap_masks() const {
    return masks_;
  }
  const std::array<double, kModelOutputs>& output_min() const { return o_min_; }
  const std::array<double, kModelOutputs>& output_max() const { return o_max_; }
  const std::vector<int>& dropped_inputs() const { return dropped_; }

  void save(const std::string& path) const;
  static EnsembleModel load(const std::string& path);

 private:
  friend EnsembleModel fit_ensemble(const std::vector<TransitionSample>&, int,
                                    const MlpConfig&, std::uint64_t);
  friend TabularMdp discretize_model(const EnsembleModel&,
                                     const std::vector<TransitionSample>&,
                                     const DiscretizationSpec&, int, std::uint64_t);

  Eigen::VectorXd normalize_input(const std::array<double, kModelFeatures>& f,
                                  int action) const;
  Gaussian to_raw(const std::array<double, kModelFeatures>& f,
                  const Eigen::MatrixXd& mean_n, const Eigen::MatrixXd& var_n,
                  Eigen::Index col) const;

  std::vector<GaussianMlp> nets_;
  std::array<double, kModelFeatures> in_mean_{}, in_std_{};
  std::array<double, kModelOutputs> t_mean_{}, t_std_{};  // target scaling
  std::array<double, kModelOutputs> o_min_{}, o_max_{};   // clamp ranges
  std::vector<std::vector<std::uint32_t>> masks_;  // bootstrap rows per member
  std::vector<int> dropped_;                       // zero-variance inputs
};

// Trains B members on independent bootstrap resamples. Requires at least 100
// samples; zero-variance input features are dropped with a warning on stderr.
EnsembleModel fit_ensemble(const std::vector<TransitionSample>& samples, int members,
                           const MlpConfig& cfg = {}, std::uint64_t seed = 1);

// Monte-Carlo projection of the continuous model onto the discretized state
// space: for every state visited in `samples` and every action, draws
// samples_per_cell successors from the model (anchored at observed
// representatives of the cell) and tallies bin-to-bin frequencies. Rewards
// are recomputed from the feature pairs. Successor cells never visited are
// closed off with zero-reward self-loops and listed in `flagged`.
TabularMdp discretize_model(const EnsembleModel& model,
                            const std::vector<TransitionSample>& samples,
                            const DiscretizationSpec& spec, int samples_per_cell,
                            std::uint64_t seed);

constexpr int kFidelityVars = 10;
std::string_view fidelity_var_name(int i);

// The ten reporting variables extracted from one transition.
std::array<double, kFidelityVars> fidelity_vars(const StateVector& prev,
                                                double prev_mark,
                                                const StateVector& next,
                                                double next_mark);

struct FidelityRow {
  std::string variable;
  double emd = 0.0;   // 1-D Wasserstein on min-max normalized pooled values
  double rmse = 0.0;  // per-minute paired error, same normalization
};

struct FidelityReport {
  std::vector<FidelityRow> rows;  // fixed kFidelityVars order
  void to_csv(std::ostream& out, const std::string& run_tag) const;
};

// Pure comparison of two aligned per-minute variable series.
FidelityReport fidelity_from_series(
    const std::vector<std::array<double, kFidelityVars>>& truth,
    const std::vector<std::array<double, kFidelityVars>>& model);

// Runs n_days held-out random-action days, feeds the identical (state,
// action) stream to the fitted model, and compares the one-step predictions
// against the realized next states.
FidelityReport evaluate_fidelity(const EnsembleModel& model, const MarketConfig& cfg,
                                 int n_days, std::uint64_t seed);

}  // namespace msim
