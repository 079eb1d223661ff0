#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msim/explain.hpp"
#include "msim/market.hpp"
#include "msim/metrics.hpp"
#include "msim/model.hpp"
#include "msim/rl.hpp"

namespace msim {

// Configuration problems (bad file, bad schema, bad value) exit with 1;
// everything else that throws exits with 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------
struct ProfileSpec {
  SubrationalityProfile profile = Rational{};
  int count = 1;  // RL copies of this profile in impact runs
};

struct BeliefConfig {
  int members = 5;       // ensemble size
  int days = 10;         // random-action days of training transitions
  int plan_samples = 200;  // model draws per (state, action) cell
  MlpConfig mlp;
};

struct ShapSettings {
  int permutations = 2000;
  int background = 500;  // states imputed from, drawn from evaluation days
  int states = 100;      // states explained
};

// The whole experiment in one strict-schema JSON file. Unknown keys are
// rejected by name; omitted keys take the defaults below and are echoed back
// by to_json, so parse(echo(parse(text))) == parse(text) field for field.
struct ExperimentConfig {
  std::string setting = "baseline";
  std::uint64_t seed = 1;
  int days = 50;  // evaluation days
  int threads = 1;
  std::string out_dir = "out";
  MarketConfig market;
  TrainConfig train;
  BeliefConfig model;
  ShapSettings shap;
  std::vector<ProfileSpec> profiles = {{Rational{}, 1}};

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  std::string to_json() const;
  // Hash of the canonical echo with out_dir and threads normalized away:
  // identifies the experiment, not where or how wide it ran.
  std::uint64_t hash() const;
};

// Per-day seed, shared across settings so day d is a paired draw everywhere.
inline std::uint64_t day_seed(std::uint64_t base, int day) {
  return mix64(base, static_cast<std::uint64_t>(day));
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------
// Written next to every CSV batch. The hash covers version, config and
// artifacts -- not the timestamp -- and its hex form tags every output row.
struct RunManifest {
  std::string version = "msim 1.0";
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, std::uint64_t>> artifacts;  // name, content hash
  std::string created;  // wall clock, excluded from the hash

  void add_artifact(const std::string& name, std::uint64_t content_hash);
  std::uint64_t hash() const;
  std::string tag() const;  // 16 hex digits of hash()
  std::string to_text() const;
  void save(const std::string& path) const;
};

RunManifest make_manifest(const ExperimentConfig& cfg);
// FNV over the raw bytes; throws std::runtime_error when unreadable.
std::uint64_t file_hash(const std::string& path);

// ---------------------------------------------------------------------------
// Training and artifact management
// ---------------------------------------------------------------------------
// One discretization per (config, seed), shared by every profile so their
// policies live on the same state space.
DiscretizationSpec experiment_discretization(const ExperimentConfig& cfg);

std::string artifact_path(const ExperimentConfig& cfg,
                          const SubrationalityProfile& profile);

// Trains from scratch: Q-learning for the model-free profiles, the belief
// pipeline (ensemble fit -> discretized MDP -> biased planning) for the
// optimism family. Bounded copies the Rational table and keeps its beta for
// acting time.
PolicyArtifact train_profile(const ExperimentConfig& cfg,
                             const SubrationalityProfile& profile);

// Loads the saved artifact if present (verifying the stored profile),
// otherwise trains and saves it.
PolicyArtifact ensure_artifact(const ExperimentConfig& cfg,
                               const SubrationalityProfile& profile);

// The ensemble-to-MDP bridge, exposed so optimistic and pessimistic planning
// can share one fitted model.
struct BeliefPipeline {
  EnsembleModel model;
  DiscretizationSpec disc;
  TabularMdp mdp;
};
BeliefPipeline build_belief_pipeline(const ExperimentConfig& cfg);
PolicyArtifact plan_profile(const BeliefPipeline& pipeline,
                            const SubrationalityProfile& profile, double gamma);

// A loaded policy plus the brain that acts on it (Boltzmann for Bounded,
// greedy otherwise). The brain points into `artifact`, hence the fixed
// address.
struct ActingPolicy {
  PolicyArtifact artifact;
  std::unique_ptr<InvestorBrain> brain;
};
std::unique_ptr<ActingPolicy> make_acting_policy(PolicyArtifact artifact);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------
struct PnlRow {
  std::string setting;
  std::string profile;
  int day = 0;
  std::uint64_t seed = 0;
  double pnl = 0.0;  // dollars
};

// Each configured profile runs one investor over cfg.days paired days.
std::vector<PnlRow> run_pnl_experiment(const ExperimentConfig& cfg);

struct QualityRow {
  std::string setting;
  std::string profile;  // "none" for the no-RL baseline
  int day = 0;
  std::uint64_t seed = 0;
  MarketQualityReport quality;
};

// The no-RL baseline plus each profile with `count` greedy copies, all on the
// same per-day seeds.
std::vector<QualityRow> run_market_impact(const ExperimentConfig& cfg);

struct ScenarioMinute {
  std::string profile;
  int minute = 0;
  double fundamental = 0.0;  // price units
  double price = 0.0;        // traded mark, price units
  int action = 0;
  int direction = 0;  // -1 sell, 0 hold, +1 buy
  double holdings = 0.0;
  double cash_cents = 0.0;
  double pv = 0.0;  // dollars
};

struct StageStat {
  std::string profile;
  int stage = 0;
  int start = 0;  // minutes, inclusive
  int end = 0;    // exclusive
  int buys = 0;
  int sells = 0;
  int holds = 0;
  double hold_frac = 0.0;
};

struct ScenarioResult {
  ScenarioShape kind = ScenarioShape::SineWave;
  std::vector<ScenarioMinute> minutes;
  std::vector<StageStat> stages;  // TrendWithShock only: pre / shock / post
};

// Single crafted-fundamental day per profile; policies stay the ones trained
// on the configured (stochastic) market.
ScenarioResult run_scenario(const ExperimentConfig& cfg, ScenarioShape kind);

ScenarioShape parse_scenario_kind(const std::string& text);  // ConfigError
std::string scenario_kind_name(ScenarioShape kind);

// Fits the belief ensemble and scores one-step predictions on held-out
// random-action days (cfg.days of them).
FidelityReport run_fidelity(const ExperimentConfig& cfg);

struct ShapResult {
  AttributionReport report;
  std::vector<std::vector<double>> states;  // raw feature rows, one per explained state
  std::vector<std::string> names;           // feature labels
};
ShapResult run_shap(const ExperimentConfig& cfg, const SubrationalityProfile& profile);

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------
struct SummaryRow {
  std::string setting;
  std::string profile;
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
};

struct QualitySummaryRow {
  std::string setting;
  std::string profile;
  std::string metric;
  int n = 0;  // days where the metric was defined
  double mean = 0.0;
  double stddev = 0.0;
};

void write_pnl_csv(std::ostream& os, const std::vector<PnlRow>& rows,
                   std::string_view run);
std::vector<PnlRow> read_pnl_csv(std::istream& is);  // std::runtime_error
std::vector<SummaryRow> summarize_pnl(const std::vector<PnlRow>& rows);
void write_pnl_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows,
                           std::string_view run);
std::string render_pnl_table(const std::vector<SummaryRow>& rows);

void write_quality_csv(std::ostream& os, const std::vector<QualityRow>& rows,
                       std::string_view run);
std::vector<QualityRow> read_quality_csv(std::istream& is);
std::vector<QualitySummaryRow> summarize_quality(const std::vector<QualityRow>& rows);
void write_quality_summary_csv(std::ostream& os,
                               const std::vector<QualitySummaryRow>& rows,
                               std::string_view run);
std::string render_quality_table(const std::vector<QualitySummaryRow>& rows);

void write_scenario_csv(std::ostream& os, const ScenarioResult& result,
                        std::string_view run);
void write_stage_csv(std::ostream& os, const ScenarioResult& result,
                     std::string_view run);

}  // namespace msim
