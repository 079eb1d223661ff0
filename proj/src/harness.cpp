#include "msim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace msim {
namespace {

using Json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf, 16);
}

double dollars(Money units) { return double(units) * 0.005; }

// ---------------------------------------------------------------------------
// JSON helpers: strict keys, defaulted reads, contextual errors
// ---------------------------------------------------------------------------
void check_keys(const Json& obj, std::string_view section,
                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object())
    throw ConfigError("config: section '" + std::string(section) +
                      "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("config: unknown key '" + it.key() + "' in " +
                        std::string(section));
  }
}

template <typename T>
void read_field(const Json& obj, const char* key, T& out, std::string_view section) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const Json::exception& e) {
    throw ConfigError("config: bad value for '" + std::string(key) + "' in " +
                      std::string(section) + ": " + e.what());
  }
}

void require_range(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

const char* fundamental_kind_name(FundamentalSpec::Kind k) {
  switch (k) {
    case FundamentalSpec::Kind::Ou: return "ou";
    case FundamentalSpec::Kind::Sine: return "sine";
    case FundamentalSpec::Kind::TrendShock: return "trend_shock";
    case FundamentalSpec::Kind::Decline: return "decline";
    case FundamentalSpec::Kind::Csv: return "csv";
  }
  throw std::logic_error("unreachable fundamental kind");
}

FundamentalSpec::Kind parse_fundamental_kind(const std::string& text) {
  if (text == "ou") return FundamentalSpec::Kind::Ou;
  if (text == "sine") return FundamentalSpec::Kind::Sine;
  if (text == "trend_shock") return FundamentalSpec::Kind::TrendShock;
  if (text == "decline") return FundamentalSpec::Kind::Decline;
  if (text == "csv") return FundamentalSpec::Kind::Csv;
  throw ConfigError("config: unknown fundamental kind '" + text + "'");
}

ScenarioShape shape_for_kind(FundamentalSpec::Kind k) {
  switch (k) {
    case FundamentalSpec::Kind::Sine: return ScenarioShape::SineWave;
    case FundamentalSpec::Kind::TrendShock: return ScenarioShape::TrendWithShock;
    case FundamentalSpec::Kind::Decline: return ScenarioShape::MonotoneDecline;
    default: return ScenarioShape::SineWave;  // irrelevant for ou / csv
  }
}

FundamentalSpec::Kind kind_for_shape(ScenarioShape s) {
  switch (s) {
    case ScenarioShape::SineWave: return FundamentalSpec::Kind::Sine;
    case ScenarioShape::TrendWithShock: return FundamentalSpec::Kind::TrendShock;
    case ScenarioShape::MonotoneDecline: return FundamentalSpec::Kind::Decline;
  }
  throw std::logic_error("unreachable scenario shape");
}

void parse_fundamental(const Json& j, FundamentalSpec& spec) {
  check_keys(j, "market.fundamental",
             {"kind", "mean", "kappa", "sigma", "initial", "base", "amplitude",
              "periods", "slope", "shock_depth", "shock_start", "shock_end", "drop",
              "csv_path"});
  std::string kind = fundamental_kind_name(spec.kind);
  read_field(j, "kind", kind, "market.fundamental");
  spec.kind = parse_fundamental_kind(kind);
  spec.scenario.shape = shape_for_kind(spec.kind);
  read_field(j, "mean", spec.ou.mean, "market.fundamental");
  read_field(j, "kappa", spec.ou.kappa, "market.fundamental");
  read_field(j, "sigma", spec.ou.sigma, "market.fundamental");
  read_field(j, "initial", spec.ou.initial, "market.fundamental");
  read_field(j, "base", spec.base, "market.fundamental");
  read_field(j, "amplitude", spec.scenario.amplitude, "market.fundamental");
  read_field(j, "periods", spec.scenario.periods, "market.fundamental");
  read_field(j, "slope", spec.scenario.slope, "market.fundamental");
  read_field(j, "shock_depth", spec.scenario.shock_depth, "market.fundamental");
  read_field(j, "shock_start", spec.scenario.shock_start, "market.fundamental");
  read_field(j, "shock_end", spec.scenario.shock_end, "market.fundamental");
  read_field(j, "drop", spec.scenario.drop, "market.fundamental");
  read_field(j, "csv_path", spec.csv_path, "market.fundamental");
}

Json dump_fundamental(const FundamentalSpec& spec) {
  Json j;
  j["kind"] = fundamental_kind_name(spec.kind);
  j["mean"] = spec.ou.mean;
  j["kappa"] = spec.ou.kappa;
  j["sigma"] = spec.ou.sigma;
  j["initial"] = spec.ou.initial;
  j["base"] = spec.base;
  j["amplitude"] = spec.scenario.amplitude;
  j["periods"] = spec.scenario.periods;
  j["slope"] = spec.scenario.slope;
  j["shock_depth"] = spec.scenario.shock_depth;
  j["shock_start"] = spec.scenario.shock_start;
  j["shock_end"] = spec.scenario.shock_end;
  j["drop"] = spec.scenario.drop;
  j["csv_path"] = spec.csv_path;
  return j;
}

void parse_market(const Json& j, MarketConfig& mc) {
  check_keys(j, "market",
             {"minutes", "initial_cash_cents", "value_agents", "market_makers",
              "momentum_agents", "noise_agents", "value", "market_maker", "momentum",
              "noise", "fundamental"});
  read_field(j, "minutes", mc.minutes, "market");
  std::int64_t cents = mc.initial_cash / 2;
  read_field(j, "initial_cash_cents", cents, "market");
  mc.initial_cash = cents * 2;
  read_field(j, "value_agents", mc.value_agents, "market");
  read_field(j, "market_makers", mc.market_makers, "market");
  read_field(j, "momentum_agents", mc.momentum_agents, "market");
  read_field(j, "noise_agents", mc.noise_agents, "market");
  if (j.contains("value")) {
    const Json& v = j.at("value");
    check_keys(v, "market.value", {"lambda_per_ns", "obs_stddev", "size"});
    read_field(v, "lambda_per_ns", mc.value.lambda_per_ns, "market.value");
    read_field(v, "obs_stddev", mc.value.obs_stddev, "market.value");
    read_field(v, "size", mc.value.size, "market.value");
  }
  if (j.contains("market_maker")) {
    const Json& v = j.at("market_maker");
    check_keys(v, "market.market_maker", {"wake_minutes", "level_size", "num_levels"});
    read_field(v, "wake_minutes", mc.market_maker.wake_minutes, "market.market_maker");
    read_field(v, "level_size", mc.market_maker.level_size, "market.market_maker");
    read_field(v, "num_levels", mc.market_maker.num_levels, "market.market_maker");
  }
  if (j.contains("momentum")) {
    const Json& v = j.at("momentum");
    check_keys(v, "market.momentum",
               {"wake_minutes", "short_window", "long_window", "pareto_alpha", "pareto_xm"});
    read_field(v, "wake_minutes", mc.momentum.wake_minutes, "market.momentum");
    read_field(v, "short_window", mc.momentum.short_window, "market.momentum");
    read_field(v, "long_window", mc.momentum.long_window, "market.momentum");
    read_field(v, "pareto_alpha", mc.momentum.pareto_alpha, "market.momentum");
    read_field(v, "pareto_xm", mc.momentum.pareto_xm, "market.momentum");
  }
  if (j.contains("noise")) {
    const Json& v = j.at("noise");
    check_keys(v, "market.noise", {"pareto_alpha", "pareto_xm"});
    read_field(v, "pareto_alpha", mc.noise.pareto_alpha, "market.noise");
    read_field(v, "pareto_xm", mc.noise.pareto_xm, "market.noise");
  }
  if (j.contains("fundamental")) parse_fundamental(j.at("fundamental"), mc.fundamental);
}

Json dump_market(const MarketConfig& mc) {
  Json j;
  j["minutes"] = mc.minutes;
  j["initial_cash_cents"] = mc.initial_cash / 2;
  j["value_agents"] = mc.value_agents;
  j["market_makers"] = mc.market_makers;
  j["momentum_agents"] = mc.momentum_agents;
  j["noise_agents"] = mc.noise_agents;
  j["value"] = {{"lambda_per_ns", mc.value.lambda_per_ns},
                {"obs_stddev", mc.value.obs_stddev},
                {"size", mc.value.size}};
  j["market_maker"] = {{"wake_minutes", mc.market_maker.wake_minutes},
                       {"level_size", mc.market_maker.level_size},
                       {"num_levels", mc.market_maker.num_levels}};
  j["momentum"] = {{"wake_minutes", mc.momentum.wake_minutes},
                   {"short_window", mc.momentum.short_window},
                   {"long_window", mc.momentum.long_window},
                   {"pareto_alpha", mc.momentum.pareto_alpha},
                   {"pareto_xm", mc.momentum.pareto_xm}};
  j["noise"] = {{"pareto_alpha", mc.noise.pareto_alpha},
                {"pareto_xm", mc.noise.pareto_xm}};
  j["fundamental"] = dump_fundamental(mc.fundamental);
  return j;
}

// ---------------------------------------------------------------------------
// Day-parallel evaluation
// ---------------------------------------------------------------------------
// Results land in a day-indexed slot, so aggregation never depends on the
// worker schedule. The first exception wins and is rethrown on the caller.
template <typename T, typename Fn>
std::vector<T> run_days(int days, int threads, Fn&& fn) {
  std::vector<T> out(static_cast<std::size_t>(days));
  if (threads <= 1 || days <= 1) {
    for (int d = 0; d < days; ++d) out[static_cast<std::size_t>(d)] = fn(d);
    return out;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const int d = next.fetch_add(1);
      if (d >= days) return;
      try {
        out[static_cast<std::size_t>(d)] = fn(d);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min(threads, days);
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return out;
}

// One trading day with `copies` investors acting on the shared policy.
struct EvalDay {
  DayLog log;
  FundamentalPath path;
  std::vector<InvestorTrajectory> investors;
};

EvalDay eval_day(const MarketConfig& mc, const ActingPolicy* policy, int copies,
                 std::uint64_t seed) {
  std::vector<std::unique_ptr<Agent>> extras;
  std::vector<Agent*> handles;
  const DiscretizationSpec disc =
      policy ? policy->artifact.disc : DiscretizationSpec{};
  for (int i = 0; i < (policy ? copies : 0); ++i)
    extras.push_back(std::make_unique<InvestorAgent>("rl " + std::to_string(i),
                                                     policy->brain.get(), disc));
  Simulation sim = make_market(mc, seed, std::move(extras), &handles);
  EvalDay day;
  day.log = sim.run_day();
  day.path = sim.fundamental();
  for (Agent* a : handles)
    day.investors.push_back(static_cast<InvestorAgent*>(a)->trajectory());
  return day;
}

EpisodeRunner market_episode_runner(const MarketConfig& mc,
                                    const DiscretizationSpec& disc) {
  return [mc, disc](int /*episode*/, std::uint64_t episode_seed, InvestorBrain& brain) {
    std::vector<std::unique_ptr<Agent>> extras;
    extras.push_back(std::make_unique<InvestorAgent>("rl 0", &brain, disc));
    Simulation sim = make_market(mc, episode_seed, std::move(extras));
    sim.run_day();
  };
}

std::string sanitize(std::string label) {
  std::replace(label.begin(), label.end(), ':', '_');
  return label;
}

// quantile with linear interpolation between order statistics
double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double pos = p * double(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - double(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& tok, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string("csv: bad ") + what + " '" + tok + "'");
  return v;
}

std::int64_t parse_int(const std::string& tok, const char* what) {
  std::int64_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string("csv: bad ") + what + " '" + tok + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& tok, const char* what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string("csv: bad ") + what + " '" + tok + "'");
  return v;
}

std::optional<double> parse_opt(const std::string& tok, const char* what) {
  if (tok.empty()) return std::nullopt;
  return parse_double(tok, what);
}

std::string opt_cell(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

// the nine quality metrics in CSV column order
constexpr const char* kQualityMetrics[] = {
    "mean_spread", "mean_abs_res", "total_volume", "std30_ret", "price_range",
    "abs_ret",     "autocorr1",    "efficiency",   "mean_abs_tp_fp"};

std::optional<double> quality_metric(const MarketQualityReport& q, int i) {
  switch (i) {
    case 0: return q.mean_spread;
    case 1: return q.mean_abs_res;
    case 2: return q.total_volume;
    case 3: return q.std30_ret;
    case 4: return q.price_range;
    case 5: return q.abs_ret;
    case 6: return q.autocorr1;
    case 7: return q.efficiency;
    case 8: return q.mean_abs_tp_fp;
  }
  throw std::logic_error("quality metric index");
}

void set_quality_metric(MarketQualityReport& q, int i, std::optional<double> v) {
  switch (i) {
    case 0: q.mean_spread = v; return;
    case 1: q.mean_abs_res = v; return;
    case 2: q.total_volume = v.value_or(0.0); return;
    case 3: q.std30_ret = v; return;
    case 4: q.price_range = v; return;
    case 5: q.abs_ret = v; return;
    case 6: q.autocorr1 = v; return;
    case 7: q.efficiency = v; return;
    case 8: q.mean_abs_tp_fp = v; return;
  }
  throw std::logic_error("quality metric index");
}

std::string now_iso() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------
ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, "the top level",
             {"setting", "seed", "days", "threads", "out_dir", "market", "train",
              "model", "shap", "profiles"});

  ExperimentConfig cfg;
  read_field(j, "setting", cfg.setting, "the top level");
  read_field(j, "seed", cfg.seed, "the top level");
  read_field(j, "days", cfg.days, "the top level");
  read_field(j, "threads", cfg.threads, "the top level");
  read_field(j, "out_dir", cfg.out_dir, "the top level");
  if (j.contains("market")) parse_market(j.at("market"), cfg.market);
  if (j.contains("train")) {
    const Json& t = j.at("train");
    check_keys(t, "train",
               {"episodes", "alpha", "gamma", "eps_start", "eps_end", "eps_fraction"});
    read_field(t, "episodes", cfg.train.episodes, "train");
    read_field(t, "alpha", cfg.train.alpha, "train");
    read_field(t, "gamma", cfg.train.gamma, "train");
    read_field(t, "eps_start", cfg.train.eps_start, "train");
    read_field(t, "eps_end", cfg.train.eps_end, "train");
    read_field(t, "eps_fraction", cfg.train.eps_fraction, "train");
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    check_keys(m, "model",
               {"members", "days", "plan_samples", "hidden", "epochs", "batch", "lr",
                "weight_decay"});
    read_field(m, "members", cfg.model.members, "model");
    read_field(m, "days", cfg.model.days, "model");
    read_field(m, "plan_samples", cfg.model.plan_samples, "model");
    read_field(m, "hidden", cfg.model.mlp.hidden, "model");
    read_field(m, "epochs", cfg.model.mlp.epochs, "model");
    read_field(m, "batch", cfg.model.mlp.batch, "model");
    read_field(m, "lr", cfg.model.mlp.lr, "model");
    read_field(m, "weight_decay", cfg.model.mlp.weight_decay, "model");
  }
  if (j.contains("shap")) {
    const Json& s = j.at("shap");
    check_keys(s, "shap", {"permutations", "background", "states"});
    read_field(s, "permutations", cfg.shap.permutations, "shap");
    read_field(s, "background", cfg.shap.background, "shap");
    read_field(s, "states", cfg.shap.states, "shap");
  }
  if (j.contains("profiles")) {
    const Json& ps = j.at("profiles");
    if (!ps.is_array()) throw ConfigError("config: 'profiles' must be an array");
    cfg.profiles.clear();
    for (const Json& p : ps) {
      check_keys(p, "profiles[]", {"profile", "count"});
      ProfileSpec spec;
      std::string label = profile_label(spec.profile);
      read_field(p, "profile", label, "profiles[]");
      try {
        spec.profile = parse_profile(label);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      read_field(p, "count", spec.count, "profiles[]");
      require_range(spec.count >= 1, "profile count must be >= 1");
      cfg.profiles.push_back(std::move(spec));
    }
  }

  require_range(cfg.days >= 1, "days must be >= 1");
  require_range(cfg.threads >= 1, "threads must be >= 1");
  require_range(!cfg.out_dir.empty(), "out_dir must not be empty");
  require_range(cfg.market.minutes >= 1, "market.minutes must be >= 1");
  require_range(cfg.market.initial_cash >= 0, "initial_cash_cents must be >= 0");
  require_range(cfg.market.value_agents >= 0 && cfg.market.market_makers >= 0 &&
                    cfg.market.momentum_agents >= 0 && cfg.market.noise_agents >= 0,
                "agent counts must be >= 0");
  require_range(cfg.train.episodes >= 1, "train.episodes must be >= 1");
  require_range(cfg.train.alpha > 0.0 && cfg.train.alpha <= 1.0,
                "train.alpha must be in (0,1]");
  require_range(cfg.train.gamma >= 0.0 && cfg.train.gamma <= 1.0,
                "train.gamma must be in [0,1]");
  require_range(cfg.train.eps_start >= cfg.train.eps_end && cfg.train.eps_end >= 0.0 &&
                    cfg.train.eps_start <= 1.0,
                "train epsilon schedule must satisfy 1 >= eps_start >= eps_end >= 0");
  require_range(cfg.train.eps_fraction > 0.0 && cfg.train.eps_fraction <= 1.0,
                "train.eps_fraction must be in (0,1]");
  require_range(cfg.model.members >= 1, "model.members must be >= 1");
  require_range(cfg.model.days >= 1, "model.days must be >= 1");
  require_range(cfg.model.plan_samples >= 1, "model.plan_samples must be >= 1");
  require_range(cfg.model.mlp.hidden >= 1 && cfg.model.mlp.epochs >= 1 &&
                    cfg.model.mlp.batch >= 1,
                "model network settings must be >= 1");
  require_range(cfg.model.mlp.lr > 0.0, "model.lr must be > 0");
  require_range(cfg.model.mlp.weight_decay >= 0.0, "model.weight_decay must be >= 0");
  require_range(cfg.shap.permutations >= 1 && cfg.shap.background >= 1 &&
                    cfg.shap.states >= 1,
                "shap settings must be >= 1");
  require_range(!cfg.profiles.empty(), "profiles must not be empty");
  for (const auto& p : cfg.profiles) {
    try {
      validate(p.profile);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return from_json(text.str());
}

std::string ExperimentConfig::to_json() const {
  Json j;
  j["setting"] = setting;
  j["seed"] = seed;
  j["days"] = days;
  j["threads"] = threads;
  j["out_dir"] = out_dir;
  j["market"] = dump_market(market);
  j["train"] = {{"episodes", train.episodes},   {"alpha", train.alpha},
                {"gamma", train.gamma},         {"eps_start", train.eps_start},
                {"eps_end", train.eps_end},     {"eps_fraction", train.eps_fraction}};
  j["model"] = {{"members", model.members},         {"days", model.days},
                {"plan_samples", model.plan_samples}, {"hidden", model.mlp.hidden},
                {"epochs", model.mlp.epochs},       {"batch", model.mlp.batch},
                {"lr", model.mlp.lr},               {"weight_decay", model.mlp.weight_decay}};
  j["shap"] = {{"permutations", shap.permutations},
               {"background", shap.background},
               {"states", shap.states}};
  Json ps = Json::array();
  for (const auto& p : profiles)
    ps.push_back({{"profile", profile_label(p.profile)}, {"count", p.count}});
  j["profiles"] = ps;
  return j.dump(2) + "\n";
}

std::uint64_t ExperimentConfig::hash() const {
  ExperimentConfig canon = *this;
  canon.out_dir = "out";
  canon.threads = 1;
  return fnv1a64(canon.to_json());
}

// ---------------------------------------------------------------------------
// RunManifest
// ---------------------------------------------------------------------------
void RunManifest::add_artifact(const std::string& name, std::uint64_t content_hash) {
  artifacts.emplace_back(name, content_hash);
}

std::uint64_t RunManifest::hash() const {
  std::string body = version + '\n' + hex16(config_hash) + '\n';
  for (const auto& [name, h] : artifacts) body += name + ' ' + hex16(h) + '\n';
  return fnv1a64(body);
}

std::string RunManifest::tag() const { return hex16(hash()); }

std::string RunManifest::to_text() const {
  std::string out = "msim-manifest 1\n";
  out += "version " + version + '\n';
  out += "config " + hex16(config_hash) + '\n';
  for (const auto& [name, h] : artifacts) out += "artifact " + name + ' ' + hex16(h) + '\n';
  out += "run " + tag() + '\n';
  out += "created " + created + '\n';
  return out;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write '" + path + "'");
  out << to_text();
}

RunManifest make_manifest(const ExperimentConfig& cfg) {
  RunManifest m;
  m.config_hash = cfg.hash();
  m.created = now_iso();
  return m;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return fnv1a64(bytes.str());
}

// ---------------------------------------------------------------------------
// Training and artifacts
// ---------------------------------------------------------------------------
DiscretizationSpec experiment_discretization(const ExperimentConfig& cfg) {
  constexpr int kWarmupDays = 5;
  const auto samples =
      collect_transitions(cfg.market, kWarmupDays, mix64(cfg.seed, fnv1a64("warmup")));
  std::vector<StateVector> states;
  states.reserve(samples.size());
  for (const auto& ts : samples) states.push_back(ts.state);
  return calibrate_discretization(states);
}

std::string artifact_path(const ExperimentConfig& cfg,
                          const SubrationalityProfile& profile) {
  return cfg.out_dir + "/policy_" + sanitize(profile_label(profile)) + ".qt";
}

PolicyArtifact train_profile(const ExperimentConfig& cfg,
                             const SubrationalityProfile& profile) {
  validate(profile);
  if (const auto* b = std::get_if<Bounded>(&profile)) {
    // trains exactly as Rational; beta only matters when acting
    PolicyArtifact artifact = ensure_artifact(cfg, Rational{});
    artifact.profile = *b;
    return artifact;
  }
  if (std::holds_alternative<Optimistic>(profile) ||
      std::holds_alternative<Pessimistic>(profile)) {
    const BeliefPipeline pipeline = build_belief_pipeline(cfg);
    return plan_profile(pipeline, profile, cfg.train.gamma);
  }
  const DiscretizationSpec disc = experiment_discretization(cfg);
  TrainConfig tc = cfg.train;
  tc.seed = mix64(cfg.seed, fnv1a64(profile_label(profile)));
  return train_online(market_episode_runner(cfg.market, disc), disc, tc, profile);
}

PolicyArtifact ensure_artifact(const ExperimentConfig& cfg,
                               const SubrationalityProfile& profile) {
  const std::string path = artifact_path(cfg, profile);
  if (std::filesystem::exists(path)) {
    PolicyArtifact artifact = PolicyArtifact::load(path);
    if (profile_label(artifact.profile) != profile_label(profile))
      throw std::runtime_error("artifact '" + path + "' holds profile '" +
                               profile_label(artifact.profile) + "', expected '" +
                               profile_label(profile) + "'");
    return artifact;
  }
  PolicyArtifact artifact = train_profile(cfg, profile);
  std::filesystem::create_directories(cfg.out_dir);
  artifact.save(path);
  return artifact;
}

BeliefPipeline build_belief_pipeline(const ExperimentConfig& cfg) {
  BeliefPipeline pipeline;
  pipeline.disc = experiment_discretization(cfg);
  const auto samples = collect_transitions(cfg.market, cfg.model.days,
                                           mix64(cfg.seed, fnv1a64("model-data")));
  pipeline.model = fit_ensemble(samples, cfg.model.members, cfg.model.mlp,
                                mix64(cfg.seed, fnv1a64("ensemble")));
  pipeline.mdp = discretize_model(pipeline.model, samples, pipeline.disc,
                                  cfg.model.plan_samples, mix64(cfg.seed, fnv1a64("mdp")));
  return pipeline;
}

PolicyArtifact plan_profile(const BeliefPipeline& pipeline,
                            const SubrationalityProfile& profile, double gamma) {
  PlanConfig pc;
  pc.gamma = gamma;
  return plan_with_model(pipeline.mdp, pipeline.disc, profile, pc).artifact;
}

std::unique_ptr<ActingPolicy> make_acting_policy(PolicyArtifact artifact) {
  auto policy = std::make_unique<ActingPolicy>();
  policy->artifact = std::move(artifact);
  if (const auto* b = std::get_if<Bounded>(&policy->artifact.profile))
    policy->brain = std::make_unique<BoltzmannBrain>(policy->artifact.q, b->beta);
  else
    policy->brain = std::make_unique<GreedyBrain>(policy->artifact.q);
  return policy;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------
std::vector<PnlRow> run_pnl_experiment(const ExperimentConfig& cfg) {
  std::vector<PnlRow> rows;
  for (const ProfileSpec& spec : cfg.profiles) {
    const auto policy = make_acting_policy(ensure_artifact(cfg, spec.profile));
    const std::string label = profile_label(spec.profile);
    const auto pnls = run_days<Money>(cfg.days, cfg.threads, [&](int d) {
      const EvalDay day = eval_day(cfg.market, policy.get(), 1, day_seed(cfg.seed, d));
      const auto& traj = day.investors.at(0);
      return traj.final_pv - traj.initial_pv;
    });
    for (int d = 0; d < cfg.days; ++d)
      rows.push_back({cfg.setting, label, d, day_seed(cfg.seed, d),
                      dollars(pnls[static_cast<std::size_t>(d)])});
  }
  return rows;
}

std::vector<QualityRow> run_market_impact(const ExperimentConfig& cfg) {
  std::vector<QualityRow> rows;
  auto run_setting = [&](const ActingPolicy* policy, int copies,
                         const std::string& label) {
    const auto reports =
        run_days<MarketQualityReport>(cfg.days, cfg.threads, [&](int d) {
          const EvalDay day =
              eval_day(cfg.market, policy, copies, day_seed(cfg.seed, d));
          return daily_quality_report(day.log, day.path);
        });
    for (int d = 0; d < cfg.days; ++d)
      rows.push_back({cfg.setting, label, d, day_seed(cfg.seed, d),
                      reports[static_cast<std::size_t>(d)]});
  };
  run_setting(nullptr, 0, "none");
  for (const ProfileSpec& spec : cfg.profiles) {
    const auto policy = make_acting_policy(ensure_artifact(cfg, spec.profile));
    run_setting(policy.get(), spec.count, profile_label(spec.profile));
  }
  return rows;
}

ScenarioResult run_scenario(const ExperimentConfig& cfg, ScenarioShape kind) {
  ScenarioResult result;
  result.kind = kind;
  MarketConfig mc = cfg.market;
  mc.fundamental.kind = kind_for_shape(kind);
  mc.fundamental.scenario.shape = kind;

  for (const ProfileSpec& spec : cfg.profiles) {
    // policies stay trained on the configured market, not the crafted path
    const auto policy = make_acting_policy(ensure_artifact(cfg, spec.profile));
    const std::string label = profile_label(spec.profile);
    const EvalDay day = eval_day(mc, policy.get(), 1, day_seed(cfg.seed, 0));
    const InvestorTrajectory& traj = day.investors.at(0);
    const int minutes = static_cast<int>(traj.actions.size());
    for (int t = 0; t < minutes; ++t) {
      const std::size_t ts = static_cast<std::size_t>(t);
      const StateVector& s = traj.states[ts];
      const double mark = traj.marks[ts];
      ScenarioMinute row;
      row.profile = label;
      row.minute = t;
      row.fundamental = day.path.at(t);
      row.price = mark;
      row.action = traj.actions[ts];
      row.direction = action_direction(traj.actions[ts]);
      row.holdings = s.holdings;
      row.cash_cents = s.cash;
      row.pv = s.cash / 100.0 + s.holdings * mark * 0.005;
      result.minutes.push_back(std::move(row));
    }
    if (kind == ScenarioShape::TrendWithShock) {
      const int lo = std::clamp(mc.fundamental.scenario.shock_start, 0, minutes);
      const int hi = std::clamp(mc.fundamental.scenario.shock_end, lo, minutes);
      const std::array<std::pair<int, int>, 3> bounds{
          {{0, lo}, {lo, hi}, {hi, minutes}}};
      for (int stage = 0; stage < 3; ++stage) {
        StageStat st;
        st.profile = label;
        st.stage = stage;
        st.start = bounds[static_cast<std::size_t>(stage)].first;
        st.end = bounds[static_cast<std::size_t>(stage)].second;
        for (int t = st.start; t < st.end; ++t) {
          const int dir = action_direction(traj.actions[static_cast<std::size_t>(t)]);
          if (dir > 0)
            ++st.buys;
          else if (dir < 0)
            ++st.sells;
          else
            ++st.holds;
        }
        const int span = st.end - st.start;
        st.hold_frac = span > 0 ? double(st.holds) / double(span) : 0.0;
        result.stages.push_back(std::move(st));
      }
    }
  }
  return result;
}

ScenarioShape parse_scenario_kind(const std::string& text) {
  if (text == "sine") return ScenarioShape::SineWave;
  if (text == "trend_shock") return ScenarioShape::TrendWithShock;
  if (text == "decline") return ScenarioShape::MonotoneDecline;
  throw ConfigError("config: unknown scenario kind '" + text +
                    "' (expected sine, trend_shock or decline)");
}

std::string scenario_kind_name(ScenarioShape kind) {
  switch (kind) {
    case ScenarioShape::SineWave: return "sine";
    case ScenarioShape::TrendWithShock: return "trend_shock";
    case ScenarioShape::MonotoneDecline: return "decline";
  }
  throw std::logic_error("unreachable scenario shape");
}

FidelityReport run_fidelity(const ExperimentConfig& cfg) {
  const auto samples = collect_transitions(cfg.market, cfg.model.days,
                                           mix64(cfg.seed, fnv1a64("model-data")));
  const EnsembleModel model = fit_ensemble(samples, cfg.model.members, cfg.model.mlp,
                                           mix64(cfg.seed, fnv1a64("ensemble")));
  return evaluate_fidelity(model, cfg.market, cfg.days,
                           mix64(cfg.seed, fnv1a64("fidelity")));
}

ShapResult run_shap(const ExperimentConfig& cfg, const SubrationalityProfile& profile) {
  const auto policy_artifact = ensure_artifact(cfg, profile);
  const PolicyFn policy = make_policy_direction_fn(
      policy_artifact.q, policy_artifact.disc, policy_artifact.profile);
  const auto acting = make_acting_policy(policy_artifact);

  // pool observation vectors from evaluation days until both draws fit
  const std::size_t needed =
      static_cast<std::size_t>(cfg.shap.background) +
      static_cast<std::size_t>(cfg.shap.states);
  std::vector<std::vector<double>> pool;
  for (int d = 0; pool.size() < needed; ++d) {
    if (d >= 512)
      throw std::runtime_error("shap: evaluation days yield too few states");
    const EvalDay day = eval_day(cfg.market, acting.get(), 1, day_seed(cfg.seed, d));
    for (const StateVector& s : day.investors.at(0).states)
      pool.push_back(policy_features(s));
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix64(cfg.seed, fnv1a64("shap-pool")));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  ShapResult result;
  std::vector<std::vector<double>> background;
  for (int i = 0; i < cfg.shap.background; ++i)
    background.push_back(pool[order[static_cast<std::size_t>(i)]]);
  for (int i = 0; i < cfg.shap.states; ++i)
    result.states.push_back(
        pool[order[static_cast<std::size_t>(cfg.shap.background + i)]]);

  result.report = global_importance(policy, result.states, background,
                                    cfg.shap.permutations,
                                    mix64(cfg.seed, fnv1a64("shap")));
  for (int i = 0; i < StateVector::kFeatures; ++i)
    result.names.emplace_back(StateVector::feature_name(i));
  return result;
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------
void write_pnl_csv(std::ostream& os, const std::vector<PnlRow>& rows,
                   std::string_view run) {
  os << "setting,profile,day,seed,pnl,run\n";
  for (const auto& r : rows)
    os << r.setting << ',' << r.profile << ',' << r.day << ',' << r.seed << ','
       << fmt(r.pnl) << ',' << run << '\n';
}

std::vector<PnlRow> read_pnl_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "setting,profile,day,seed,pnl,run")
    throw std::runtime_error("pnl csv: missing or malformed header");
  std::vector<PnlRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 6)
      throw std::runtime_error("pnl csv: expected 6 fields, got " +
                               std::to_string(cells.size()) + " in '" + line + "'");
    PnlRow r;
    r.setting = cells[0];
    r.profile = cells[1];
    r.day = static_cast<int>(parse_int(cells[2], "day"));
    r.seed = parse_u64(cells[3], "seed");
    r.pnl = parse_double(cells[4], "pnl");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SummaryRow> summarize_pnl(const std::vector<PnlRow>& rows) {
  // first-appearance group order keeps the config's profile order
  std::vector<std::pair<std::string, std::string>> keys;
  std::vector<std::vector<double>> groups;
  for (const auto& r : rows) {
    const std::pair<std::string, std::string> key{r.setting, r.profile};
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      groups.emplace_back();
      it = std::prev(keys.end());
    }
    groups[static_cast<std::size_t>(it - keys.begin())].push_back(r.pnl);
  }
  std::vector<SummaryRow> out;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    std::vector<double>& xs = groups[g];
    SummaryRow s;
    s.setting = keys[g].first;
    s.profile = keys[g].second;
    s.n = static_cast<int>(xs.size());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    s.stddev = population_stddev(xs);
    std::sort(xs.begin(), xs.end());
    s.q25 = quantile(xs, 0.25);
    s.q50 = quantile(xs, 0.50);
    s.q75 = quantile(xs, 0.75);
    out.push_back(std::move(s));
  }
  return out;
}

void write_pnl_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows,
                           std::string_view run) {
  os << "setting,profile,n,mean,std,q25,q50,q75,run\n";
  for (const auto& r : rows)
    os << r.setting << ',' << r.profile << ',' << r.n << ',' << fmt(r.mean) << ','
       << fmt(r.stddev) << ',' << fmt(r.q25) << ',' << fmt(r.q50) << ','
       << fmt(r.q75) << ',' << run << '\n';
}

std::string render_pnl_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %-22s %5s %12s %12s %12s %12s %12s\n",
                "setting", "profile", "n", "mean", "std", "q25", "median", "q75");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line),
                  "%-14s %-22s %5d %12.2f %12.2f %12.2f %12.2f %12.2f\n",
                  r.setting.c_str(), r.profile.c_str(), r.n, r.mean, r.stddev, r.q25,
                  r.q50, r.q75);
    os << line;
  }
  return os.str();
}

void write_quality_csv(std::ostream& os, const std::vector<QualityRow>& rows,
                       std::string_view run) {
  os << "setting,profile,day,seed";
  for (const char* m : kQualityMetrics) os << ',' << m;
  os << ",run\n";
  for (const auto& r : rows) {
    os << r.setting << ',' << r.profile << ',' << r.day << ',' << r.seed;
    for (int i = 0; i < 9; ++i) os << ',' << opt_cell(quality_metric(r.quality, i));
    os << ',' << run << '\n';
  }
}

std::vector<QualityRow> read_quality_csv(std::istream& is) {
  std::string line;
  std::string want = "setting,profile,day,seed";
  for (const char* m : kQualityMetrics) want += std::string(",") + m;
  want += ",run";
  if (!std::getline(is, line) || line != want)
    throw std::runtime_error("quality csv: missing or malformed header");
  std::vector<QualityRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 14)
      throw std::runtime_error("quality csv: expected 14 fields, got " +
                               std::to_string(cells.size()) + " in '" + line + "'");
    QualityRow r;
    r.setting = cells[0];
    r.profile = cells[1];
    r.day = static_cast<int>(parse_int(cells[2], "day"));
    r.seed = parse_u64(cells[3], "seed");
    for (int i = 0; i < 9; ++i)
      set_quality_metric(r.quality, i,
                         parse_opt(cells[static_cast<std::size_t>(4 + i)],
                                   kQualityMetrics[i]));
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<QualitySummaryRow> summarize_quality(const std::vector<QualityRow>& rows) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::vector<std::vector<const MarketQualityReport*>> groups;
  for (const auto& r : rows) {
    const std::pair<std::string, std::string> key{r.setting, r.profile};
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      groups.emplace_back();
      it = std::prev(keys.end());
    }
    groups[static_cast<std::size_t>(it - keys.begin())].push_back(&r.quality);
  }
  std::vector<QualitySummaryRow> out;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    for (int i = 0; i < 9; ++i) {
      std::vector<double> xs;
      for (const MarketQualityReport* q : groups[g])
        if (const auto v = quality_metric(*q, i)) xs.push_back(*v);
      QualitySummaryRow s;
      s.setting = keys[g].first;
      s.profile = keys[g].second;
      s.metric = kQualityMetrics[i];
      s.n = static_cast<int>(xs.size());
      if (!xs.empty()) {
        s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
        s.stddev = population_stddev(xs);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

void write_quality_summary_csv(std::ostream& os,
                               const std::vector<QualitySummaryRow>& rows,
                               std::string_view run) {
  os << "setting,profile,metric,n,mean,std,run\n";
  for (const auto& r : rows)
    os << r.setting << ',' << r.profile << ',' << r.metric << ',' << r.n << ','
       << fmt(r.mean) << ',' << fmt(r.stddev) << ',' << run << '\n';
}

std::string render_quality_table(const std::vector<QualitySummaryRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %-22s %-16s %5s %14s %14s\n", "setting",
                "profile", "metric", "n", "mean", "std");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-14s %-22s %-16s %5d %14.6g %14.6g\n",
                  r.setting.c_str(), r.profile.c_str(), r.metric.c_str(), r.n, r.mean,
                  r.stddev);
    os << line;
  }
  return os.str();
}

void write_scenario_csv(std::ostream& os, const ScenarioResult& result,
                        std::string_view run) {
  os << "profile,minute,fundamental,price,action,direction,holdings,cash_cents,pv,run\n";
  for (const auto& r : result.minutes)
    os << r.profile << ',' << r.minute << ',' << fmt(r.fundamental) << ','
       << fmt(r.price) << ',' << r.action << ',' << r.direction << ','
       << fmt(r.holdings) << ',' << fmt(r.cash_cents) << ',' << fmt(r.pv) << ','
       << run << '\n';
}

void write_stage_csv(std::ostream& os, const ScenarioResult& result,
                     std::string_view run) {
  os << "profile,stage,start,end,buys,sells,holds,buy_sell_ratio,hold_frac,run\n";
  for (const auto& s : result.stages) {
    os << s.profile << ',' << s.stage << ',' << s.start << ',' << s.end << ','
       << s.buys << ',' << s.sells << ',' << s.holds << ',';
    if (s.sells > 0) os << fmt(double(s.buys) / double(s.sells));
    os << ',' << fmt(s.hold_frac) << ',' << run << '\n';
  }
}

}  // namespace msim
