// mktlab: train, evaluate and explain sub-rational investor policies from one
// JSON experiment config. Outputs are CSVs plus a manifest whose hash tags
// every row. Exit codes: 0 ok, 1 bad config/usage, 2 runtime failure.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "msim/harness.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> days;
  std::optional<int> threads;
};

msim::ExperimentConfig load_config(const Overrides& ov) {
  msim::ExperimentConfig cfg;
  if (!ov.config_path.empty()) cfg = msim::ExperimentConfig::load(ov.config_path);
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.out_dir) cfg.out_dir = *ov.out_dir;
  if (ov.days) cfg.days = *ov.days;
  if (ov.threads) cfg.threads = *ov.threads;
  if (cfg.days < 1) throw msim::ConfigError("config: days must be >= 1");
  if (cfg.threads < 1) throw msim::ConfigError("config: threads must be >= 1");
  return cfg;
}

bool is_belief(const msim::SubrationalityProfile& p) {
  return std::holds_alternative<msim::Optimistic>(p) ||
         std::holds_alternative<msim::Pessimistic>(p);
}

// Ensure every configured artifact exists, sharing one fitted belief pipeline
// across the optimism family instead of refitting per profile.
std::vector<std::string> ensure_all(const msim::ExperimentConfig& cfg) {
  std::optional<msim::BeliefPipeline> pipeline;
  std::vector<std::string> paths;
  for (const auto& spec : cfg.profiles) {
    const std::string path = msim::artifact_path(cfg, spec.profile);
    paths.push_back(path);
    if (std::filesystem::exists(path)) {
      msim::ensure_artifact(cfg, spec.profile);  // load + verify only
      continue;
    }
    if (is_belief(spec.profile)) {
      if (!pipeline) pipeline = msim::build_belief_pipeline(cfg);
      const msim::PolicyArtifact artifact =
          msim::plan_profile(*pipeline, spec.profile, cfg.train.gamma);
      std::filesystem::create_directories(cfg.out_dir);
      artifact.save(path);
    } else {
      msim::ensure_artifact(cfg, spec.profile);
    }
  }
  return paths;
}

msim::RunManifest stamped_manifest(const msim::ExperimentConfig& cfg,
                                   const std::vector<std::string>& artifact_paths) {
  msim::RunManifest manifest = msim::make_manifest(cfg);
  for (const std::string& path : artifact_paths)
    manifest.add_artifact(std::filesystem::path(path).filename().string(),
                          msim::file_hash(path));
  return manifest;
}

void save_manifest(const msim::ExperimentConfig& cfg, const msim::RunManifest& m) {
  std::filesystem::create_directories(cfg.out_dir);
  m.save(cfg.out_dir + "/manifest.txt");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

int cmd_train(const msim::ExperimentConfig& cfg) {
  const auto paths = ensure_all(cfg);
  for (std::size_t i = 0; i < cfg.profiles.size(); ++i) {
    const msim::PolicyArtifact artifact = msim::PolicyArtifact::load(paths[i]);
    std::cout << msim::profile_label(cfg.profiles[i].profile) << " -> " << paths[i]
              << " (" << artifact.q.size() << " visited states)\n";
  }
  save_manifest(cfg, stamped_manifest(cfg, paths));
  return 0;
}

int cmd_pnl(const msim::ExperimentConfig& cfg) {
  const auto paths = ensure_all(cfg);
  const msim::RunManifest manifest = stamped_manifest(cfg, paths);
  const auto rows = msim::run_pnl_experiment(cfg);
  const auto summary = msim::summarize_pnl(rows);

  auto csv = open_out(cfg.out_dir + "/pnl.csv");
  msim::write_pnl_csv(csv, rows, manifest.tag());
  auto sumcsv = open_out(cfg.out_dir + "/pnl_summary.csv");
  msim::write_pnl_summary_csv(sumcsv, summary, manifest.tag());
  save_manifest(cfg, manifest);

  std::cout << msim::render_pnl_table(summary);
  std::cout << "wrote " << cfg.out_dir << "/pnl.csv (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_impact(const msim::ExperimentConfig& cfg) {
  const auto paths = ensure_all(cfg);
  const msim::RunManifest manifest = stamped_manifest(cfg, paths);
  const auto rows = msim::run_market_impact(cfg);
  const auto summary = msim::summarize_quality(rows);

  auto csv = open_out(cfg.out_dir + "/quality.csv");
  msim::write_quality_csv(csv, rows, manifest.tag());
  auto sumcsv = open_out(cfg.out_dir + "/quality_summary.csv");
  msim::write_quality_summary_csv(sumcsv, summary, manifest.tag());
  save_manifest(cfg, manifest);

  std::cout << msim::render_quality_table(summary);
  std::cout << "wrote " << cfg.out_dir << "/quality.csv (" << rows.size()
            << " rows)\n";
  return 0;
}

int cmd_scenario(const msim::ExperimentConfig& cfg, const std::string& kind_text) {
  const msim::ScenarioShape kind = msim::parse_scenario_kind(kind_text);
  const auto paths = ensure_all(cfg);
  const msim::RunManifest manifest = stamped_manifest(cfg, paths);
  const msim::ScenarioResult result = msim::run_scenario(cfg, kind);

  const std::string stem = cfg.out_dir + "/scenario_" + msim::scenario_kind_name(kind);
  auto csv = open_out(stem + ".csv");
  msim::write_scenario_csv(csv, result, manifest.tag());
  if (!result.stages.empty()) {
    auto stages = open_out(stem + "_stages.csv");
    msim::write_stage_csv(stages, result, manifest.tag());
    for (const auto& s : result.stages)
      std::cout << s.profile << " stage " << s.stage << " [" << s.start << ","
                << s.end << "): buys " << s.buys << " sells " << s.sells
                << " holds " << s.holds << " hold_frac " << s.hold_frac << "\n";
  }
  save_manifest(cfg, manifest);
  std::cout << "wrote " << stem << ".csv (" << result.minutes.size() << " rows)\n";
  return 0;
}

int cmd_fidelity(const msim::ExperimentConfig& cfg) {
  const msim::RunManifest manifest = stamped_manifest(cfg, {});
  const msim::FidelityReport report = msim::run_fidelity(cfg);

  auto csv = open_out(cfg.out_dir + "/fidelity.csv");
  report.to_csv(csv, manifest.tag());
  save_manifest(cfg, manifest);

  for (const auto& row : report.rows)
    std::cout << row.variable << ": emd " << row.emd << " rmse " << row.rmse << "\n";
  std::cout << "wrote " << cfg.out_dir << "/fidelity.csv\n";
  return 0;
}

int cmd_shap(const msim::ExperimentConfig& cfg, const std::string& label) {
  msim::SubrationalityProfile profile;
  try {
    profile = msim::parse_profile(label);
  } catch (const std::exception& e) {
    throw msim::ConfigError(std::string("config: ") + e.what());
  }
  const std::string path = msim::artifact_path(cfg, profile);
  msim::ensure_artifact(cfg, profile);
  const msim::RunManifest manifest = stamped_manifest(cfg, {path});
  const msim::ShapResult result = msim::run_shap(cfg, profile);

  auto local = open_out(cfg.out_dir + "/shap_local.csv");
  msim::write_shap_local(local, result.report, result.states, result.names,
                         manifest.tag());
  auto global = open_out(cfg.out_dir + "/shap_global.csv");
  msim::write_shap_global(global, result.report, result.names, manifest.tag());
  save_manifest(cfg, manifest);

  for (int i : result.report.ranking)
    std::cout << result.names[static_cast<std::size_t>(i)] << ": "
              << result.report.importance[static_cast<std::size_t>(i)] << "\n";
  std::cout << "wrote " << cfg.out_dir << "/shap_global.csv\n";
  return 0;
}

int cmd_report(const msim::ExperimentConfig& cfg, const std::string& pnl_path,
               const std::string& quality_path) {
  if (pnl_path.empty() && quality_path.empty())
    throw msim::ConfigError("config: report needs --pnl and/or --quality");
  const msim::RunManifest manifest = stamped_manifest(cfg, {});
  if (!pnl_path.empty()) {
    std::ifstream in(pnl_path);
    if (!in) throw std::runtime_error("cannot read '" + pnl_path + "'");
    const auto summary = msim::summarize_pnl(msim::read_pnl_csv(in));
    std::cout << msim::render_pnl_table(summary);
    auto csv = open_out(cfg.out_dir + "/pnl_summary.csv");
    msim::write_pnl_summary_csv(csv, summary, manifest.tag());
  }
  if (!quality_path.empty()) {
    std::ifstream in(quality_path);
    if (!in) throw std::runtime_error("cannot read '" + quality_path + "'");
    const auto summary = msim::summarize_quality(msim::read_quality_csv(in));
    std::cout << msim::render_quality_table(summary);
    auto csv = open_out(cfg.out_dir + "/quality_summary.csv");
    msim::write_quality_summary_csv(csv, summary, manifest.tag());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"market investor lab"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides ov;
  app.add_option("--config", ov.config_path, "experiment config (JSON)");
  app.add_option("--seed", ov.seed, "override base seed");
  app.add_option("--out-dir", ov.out_dir, "override output directory");
  app.add_option("--days", ov.days, "override evaluation day count");
  app.add_option("--threads", ov.threads, "override worker thread count");

  CLI::App* train = app.add_subcommand("train", "train/plan all configured policies");
  CLI::App* pnl = app.add_subcommand("pnl", "per-day PnL per profile");
  CLI::App* impact = app.add_subcommand("impact", "market quality with RL agents present");
  CLI::App* scenario = app.add_subcommand("scenario", "single crafted-fundamental day");
  std::string kind = "trend_shock";
  scenario->add_option("--kind", kind, "sine | trend_shock | decline");
  CLI::App* fidelity = app.add_subcommand("fidelity", "belief-model one-step accuracy");
  CLI::App* shap = app.add_subcommand("shap", "policy feature attributions");
  std::string shap_profile = "rational";
  shap->add_option("--profile", shap_profile, "profile label to explain");
  CLI::App* report = app.add_subcommand("report", "summarize existing CSVs");
  std::string pnl_path, quality_path;
  report->add_option("--pnl", pnl_path, "pnl.csv to summarize");
  report->add_option("--quality", quality_path, "quality.csv to summarize");

  try {
    app.parse(argc, argv);
    const msim::ExperimentConfig cfg = load_config(ov);
    if (*train) return cmd_train(cfg);
    if (*pnl) return cmd_pnl(cfg);
    if (*impact) return cmd_impact(cfg);
    if (*scenario) return cmd_scenario(cfg, kind);
    if (*fidelity) return cmd_fidelity(cfg);
    if (*shap) return cmd_shap(cfg, shap_profile);
    if (*report) return cmd_report(cfg, pnl_path, quality_path);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const msim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    // bad user-supplied values surface as invalid_argument across the library
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
