#include "msim/rl.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace msim {
namespace {

// Shortest round-tripping decimal form; keeps artifacts and labels exact.
std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

double parse_number(std::string_view text, const std::string& what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw std::invalid_argument(what + ": bad number '" + std::string(text) + "'");
  return v;
}

template <std::size_t N>
std::uint32_t edge_bin(double v, const std::array<double, N>& edges) {
  if (std::isnan(v)) return 0;
  return static_cast<std::uint32_t>(std::upper_bound(edges.begin(), edges.end(), v) -
                                    edges.begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------
ActionSpec action_spec(int action) {
  if (action < 0 || action >= kNumActions)
    throw std::out_of_range("action_spec: action index " + std::to_string(action));
  if (action == 0) return ActionSpec{Act::Hold, -1, kInvestorSize};
  if (action <= 4) return ActionSpec{Act::Buy, action - 1, kInvestorSize};
  return ActionSpec{Act::Sell, action - 5, kInvestorSize};
}

int action_index(const ActionSpec& spec) {
  if (spec.direction == Act::Hold) return 0;
  if (spec.offset_index < 0 || spec.offset_index > 3)
    throw std::out_of_range("action_index: offset index " +
                            std::to_string(spec.offset_index));
  return (spec.direction == Act::Buy ? 1 : 5) + spec.offset_index;
}

int action_direction(int action) {
  const ActionSpec spec = action_spec(action);
  if (spec.direction == Act::Buy) return 1;
  if (spec.direction == Act::Sell) return -1;
  return 0;
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------
int holdings_bin(double holdings) {
  if (holdings <= -6) return 0;
  if (holdings < 0) return 1;
  if (holdings < 1) return 2;
  if (holdings <= 5) return 3;
  return 4;
}

std::uint32_t DiscretizationSpec::discretize(const StateVector& s) const {
  std::uint32_t idx = static_cast<std::uint32_t>(holdings_bin(s.holdings));
  idx = idx * 5 + edge_bin(s.mom1, mom1_edges);
  idx = idx * 5 + edge_bin(s.mom10, mom10_edges);
  idx = idx * 5 + edge_bin(s.mom30, mom30_edges);
  idx = idx * 3 + edge_bin(s.spread, spread_edges);
  idx = idx * 3 + edge_bin(s.vol30, vol_edges);
  const double summaries[6] = {s.quote_count, s.quote_dist, s.quote_vol,
                               s.trade_vol,   s.trade_dist, s.trade_net};
  for (int i = 0; i < 6; ++i)
    idx = idx * 2 + (summaries[i] > summary_edges[static_cast<std::size_t>(i)] ? 1u : 0u);
  return idx;
}

void DiscretizationSpec::write(std::ostream& os) const {
  const auto line = [&os](const char* name, const double* v, int n) {
    os << "disc " << name;
    for (int i = 0; i < n; ++i) os << ' ' << fmt(v[i]);
    os << '\n';
  };
  line("mom1", mom1_edges.data(), 4);
  line("mom10", mom10_edges.data(), 4);
  line("mom30", mom30_edges.data(), 4);
  line("spread", spread_edges.data(), 2);
  line("vol", vol_edges.data(), 2);
  line("summary", summary_edges.data(), 6);
}

DiscretizationSpec DiscretizationSpec::read(std::istream& is) {
  DiscretizationSpec spec;
  const auto line = [&is](const char* name, double* v, int n) {
    std::string tag, got;
    is >> tag >> got;
    if (!is || tag != "disc" || got != name)
      throw std::runtime_error("discretization block: expected 'disc " +
                               std::string(name) + "', got '" + tag + " " + got + "'");
    for (int i = 0; i < n; ++i)
      if (!(is >> v[i]))
        throw std::runtime_error("discretization block: truncated '" +
                                 std::string(name) + "' edges");
  };
  line("mom1", spec.mom1_edges.data(), 4);
  line("mom10", spec.mom10_edges.data(), 4);
  line("mom30", spec.mom30_edges.data(), 4);
  line("spread", spec.spread_edges.data(), 2);
  line("vol", spec.vol_edges.data(), 2);
  line("summary", spec.summary_edges.data(), 6);
  return spec;
}

std::uint64_t DiscretizationSpec::hash() const {
  std::ostringstream oss;
  write(oss);
  return fnv1a64(oss.str());
}

DiscretizationSpec calibrate_discretization(const std::vector<StateVector>& samples) {
  if (samples.empty())
    throw std::invalid_argument("calibrate_discretization: empty sample");
  const auto sorted_feature = [&samples](int feature) {
    std::vector<double> v;
    v.reserve(samples.size());
    for (const auto& s : samples) v.push_back(s.feature(feature));
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto quantile = [](const std::vector<double>& sorted, double p) {
    const auto pos = static_cast<std::size_t>(
        std::llround(p * static_cast<double>(sorted.size() - 1)));
    return sorted[std::min(pos, sorted.size() - 1)];
  };

  DiscretizationSpec spec;
  const int mom_features[3] = {2, 3, 4};  // mom1, mom10, mom30
  std::array<double, 4>* mom_edges[3] = {&spec.mom1_edges, &spec.mom10_edges,
                                         &spec.mom30_edges};
  for (int k = 0; k < 3; ++k) {
    const auto v = sorted_feature(mom_features[k]);
    for (int i = 0; i < 4; ++i)
      (*mom_edges[k])[static_cast<std::size_t>(i)] = quantile(v, 0.2 * (i + 1));
  }
  {
    const auto v = sorted_feature(5);  // spread
    spec.spread_edges = {quantile(v, 1.0 / 3.0), quantile(v, 2.0 / 3.0)};
  }
  {
    const auto v = sorted_feature(7);  // vol30
    spec.vol_edges = {quantile(v, 1.0 / 3.0), quantile(v, 2.0 / 3.0)};
  }
  const int summary_features[6] = {8, 9, 10, 11, 12, 13};
  for (int i = 0; i < 6; ++i)
    spec.summary_edges[static_cast<std::size_t>(i)] =
        quantile(sorted_feature(summary_features[i]), 0.5);
  return spec;
}

// ---------------------------------------------------------------------------
// Q-table
// ---------------------------------------------------------------------------
double QTable::get(std::uint32_t s, int a) const {
  const auto it = rows_.find(s);
  return it == rows_.end() ? 0.0 : it->second.at(static_cast<std::size_t>(a));
}

QTable::Row QTable::get_row(std::uint32_t s) const {
  const auto it = rows_.find(s);
  return it == rows_.end() ? Row{} : it->second;
}

QTable::Row& QTable::row(std::uint32_t s) { return rows_[s]; }

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------
void validate(const SubrationalityProfile& profile) {
  if (const auto* b = std::get_if<Bounded>(&profile)) {
    if (!(b->beta >= 0) || !std::isfinite(b->beta))
      throw std::invalid_argument("bounded: beta must be >= 0");
  } else if (const auto* m = std::get_if<Myopic>(&profile)) {
    if (!(m->gamma >= 0 && m->gamma <= 1))
      throw std::invalid_argument("myopic: gamma must lie in [0,1]");
  } else if (const auto* p = std::get_if<Prospect>(&profile)) {
    if (!(p->c > 1) || !std::isfinite(p->c))
      throw std::invalid_argument("prospect: c must exceed 1");
    if (!(p->delta > 0 && p->delta <= 1))
      throw std::invalid_argument("prospect: delta must lie in (0,1]");
  } else if (const auto* o = std::get_if<Optimistic>(&profile)) {
    if (!(o->omega > 0) || !std::isfinite(o->omega))
      throw std::invalid_argument("optimistic: omega must be positive");
  } else if (const auto* q = std::get_if<Pessimistic>(&profile)) {
    if (!(q->omega < 0) || !std::isfinite(q->omega))
      throw std::invalid_argument("pessimistic: omega must be negative");
  }
}

std::string profile_label(const SubrationalityProfile& profile) {
  struct Labeler {
    std::string operator()(const Rational&) const { return "rational"; }
    std::string operator()(const Bounded& b) const { return "bounded:" + fmt(b.beta); }
    std::string operator()(const Myopic& m) const { return "myopic:" + fmt(m.gamma); }
    std::string operator()(const Prospect& p) const {
      return "prospect:" + fmt(p.c) + ":" + fmt(p.delta);
    }
    std::string operator()(const Optimistic& o) const {
      return "optimistic:" + fmt(o.omega);
    }
    std::string operator()(const Pessimistic& p) const {
      return "pessimistic:" + fmt(p.omega);
    }
  };
  return std::visit(Labeler{}, profile);
}

SubrationalityProfile parse_profile(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t from = 0;
  while (true) {
    const std::size_t colon = text.find(':', from);
    parts.push_back(text.substr(from, colon - from));
    if (colon == std::string::npos) break;
    from = colon + 1;
  }
  const std::string& kind = parts[0];
  const auto need = [&](std::size_t n) {
    if (parts.size() != n + 1)
      throw std::invalid_argument("profile '" + text + "': " + kind + " takes " +
                                  std::to_string(n) + " parameter(s)");
  };
  const auto num = [&](std::size_t i) {
    return parse_number(parts[i], "profile '" + text + "'");
  };

  SubrationalityProfile profile;
  if (kind == "rational") {
    need(0);
    profile = Rational{};
  } else if (kind == "bounded") {
    need(1);
    profile = Bounded{num(1)};
  } else if (kind == "myopic") {
    need(1);
    profile = Myopic{num(1)};
  } else if (kind == "prospect") {
    need(2);
    profile = Prospect{num(1), num(2)};
  } else if (kind == "optimistic") {
    need(1);
    profile = Optimistic{num(1)};
  } else if (kind == "pessimistic") {
    need(1);
    profile = Pessimistic{num(1)};
  } else {
    throw std::invalid_argument("unknown profile kind '" + kind + "'");
  }
  validate(profile);
  return profile;
}

double profile_gamma(const SubrationalityProfile& profile, double rational_gamma) {
  if (const auto* m = std::get_if<Myopic>(&profile)) return m->gamma;
  return rational_gamma;
}

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------
std::vector<double> boltzmann_policy(const std::vector<double>& qrow, double beta) {
  if (!(beta >= 0)) throw std::invalid_argument("boltzmann_policy: beta must be >= 0");
  if (qrow.empty()) throw std::invalid_argument("boltzmann_policy: empty Q-row");
  const double top = *std::max_element(qrow.begin(), qrow.end());
  std::vector<double> out(qrow.size());
  double total = 0.0;
  for (std::size_t i = 0; i < qrow.size(); ++i) {
    out[i] = std::exp(beta * (qrow[i] - top));
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::array<double, kNumActions> boltzmann_policy(const QTable& q, std::uint32_t s,
                                                 double beta) {
  const QTable::Row row = q.get_row(s);
  const auto probs = boltzmann_policy(std::vector<double>(row.begin(), row.end()), beta);
  std::array<double, kNumActions> out{};
  std::copy(probs.begin(), probs.end(), out.begin());
  return out;
}

double prospect_utility(double r, double c) {
  if (!(c > 1)) throw std::invalid_argument("prospect_utility: c must exceed 1");
  if (r > 0) return std::log1p(r);
  if (r < 0) return -c * std::log1p(-r);
  return 0.0;
}

double probability_weight(double p, double delta) {
  if (!(p >= 0 && p <= 1))
    throw std::invalid_argument("probability_weight: p must lie in [0,1]");
  if (!(delta > 0 && delta <= 1))
    throw std::invalid_argument("probability_weight: delta must lie in (0,1]");
  const double pd = std::pow(p, delta);
  const double qd = std::pow(1.0 - p, delta);
  return pd / std::pow(pd + qd, 1.0 / delta);
}

std::vector<double> optimism_reweight(const std::vector<double>& probs,
                                      const std::vector<double>& returns, double omega) {
  if (probs.empty())
    throw std::invalid_argument("optimism_reweight: empty successor set");
  if (probs.size() != returns.size())
    throw std::invalid_argument("optimism_reweight: size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  for (double g : returns) top = std::max(top, omega * g);
  std::vector<double> out(probs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i] = probs[i] * std::exp(omega * returns[i] - top);
    total += out[i];
  }
  if (!(total > 0))
    throw std::invalid_argument("optimism_reweight: zero total probability");
  for (double& v : out) v /= total;
  return out;
}

double exponential_discount(double r, double gamma, double t) {
  return r * std::pow(gamma, t);
}

double hyperbolic_discount(double r, double k, double t) { return r / (1.0 + k * t); }

int greedy_action(const std::array<double, kNumActions>& qrow) {
  return static_cast<int>(std::max_element(qrow.begin(), qrow.end()) - qrow.begin());
}

int greedy_policy(const QTable& q, std::uint32_t s) { return greedy_action(q.get_row(s)); }

void q_update(QTable& q, std::uint32_t s, int a, double r, std::uint32_t s_next,
              bool terminal, double alpha, const SubrationalityProfile& profile,
              double rational_gamma) {
  if (!(alpha > 0 && alpha <= 1))
    throw std::invalid_argument("q_update: alpha must lie in (0,1]");
  double shaped = r;
  if (const auto* p = std::get_if<Prospect>(&profile)) shaped = prospect_utility(r, p->c);
  const double gamma = profile_gamma(profile, rational_gamma);
  double v_next = 0.0;
  if (!terminal) {
    const QTable::Row row = q.get_row(s_next);
    v_next = *std::max_element(row.begin(), row.end());
  }
  double& cell = q.row(s).at(static_cast<std::size_t>(a));
  cell += alpha * (shaped + gamma * v_next - cell);
}

// ---------------------------------------------------------------------------
// Training plumbing
// ---------------------------------------------------------------------------
double epsilon_at(const TrainConfig& cfg, int episode) {
  const double cutoff = cfg.eps_fraction * cfg.episodes;
  if (!(cutoff > 0) || episode >= cutoff) return cfg.eps_end;
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * (episode / cutoff);
}

int QLearnerBrain::act(const StateVector&, std::uint32_t s_disc, std::mt19937_64& rng) {
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon_)
    return std::uniform_int_distribution<int>(0, kNumActions - 1)(rng);
  return greedy_policy(q_, s_disc);
}

void QLearnerBrain::observe(std::uint32_t s, int a, double r, std::uint32_t s_next,
                            bool terminal) {
  q_update(q_, s, a, r, s_next, terminal, cfg_.alpha, profile_, cfg_.gamma);
}

BoltzmannBrain::BoltzmannBrain(const QTable& q, double beta) : q_(q), beta_(beta) {
  if (!(beta >= 0)) throw std::invalid_argument("BoltzmannBrain: beta must be >= 0");
}

int BoltzmannBrain::act(const StateVector&, std::uint32_t s_disc, std::mt19937_64& rng) {
  const auto probs = boltzmann_policy(q_, s_disc, beta_);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += probs[static_cast<std::size_t>(a)];
    if (u < acc) return a;
  }
  return kNumActions - 1;
}

// ---------------------------------------------------------------------------
// Artifact serialization
// ---------------------------------------------------------------------------
namespace {

std::uint64_t config_fingerprint(const TrainConfig& cfg,
                                 const SubrationalityProfile& profile,
                                 const DiscretizationSpec& disc) {
  std::ostringstream oss;
  oss << "train " << cfg.episodes << ' ' << fmt(cfg.alpha) << ' ' << fmt(cfg.gamma)
      << ' ' << fmt(cfg.eps_start) << ' ' << fmt(cfg.eps_end) << ' '
      << fmt(cfg.eps_fraction) << ' ' << cfg.seed << ' ' << profile_label(profile)
      << ' ' << disc.hash();
  return fnv1a64(oss.str());
}

constexpr std::string_view kArtifactMagic = "msim-policy 1";

}  // namespace

void PolicyArtifact::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write policy artifact: " + path);
  os << kArtifactMagic << '\n';
  os << "profile " << profile_label(profile) << '\n';
  os << "gamma " << fmt(manifest.gamma) << '\n';
  os << "episodes " << manifest.episodes << '\n';
  os << "seed " << manifest.seed << '\n';
  os << "confighash " << std::hex << manifest.config_hash << std::dec << '\n';
  disc.write(os);
  os << "dischash " << std::hex << disc.hash() << std::dec << '\n';

  std::vector<std::uint32_t> states;
  states.reserve(q.rows().size());
  for (const auto& [s, row] : q.rows()) states.push_back(s);
  std::sort(states.begin(), states.end());
  os << "rows " << states.size() * kNumActions << '\n';
  for (const std::uint32_t s : states) {
    const QTable::Row row = q.get_row(s);
    for (int a = 0; a < kNumActions; ++a)
      os << s << ' ' << a << ' ' << fmt(row[static_cast<std::size_t>(a)]) << '\n';
  }
  os << "end\n";
  if (!os) throw std::runtime_error("short write on policy artifact: " + path);
}

PolicyArtifact PolicyArtifact::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read policy artifact: " + path);
  const auto fail = [&path](const std::string& why) -> std::runtime_error {
    return std::runtime_error("policy artifact " + path + ": " + why);
  };

  std::string line;
  if (!std::getline(is, line) || line != kArtifactMagic)
    throw fail("bad magic line '" + line + "'");

  const auto expect_key = [&](const char* key) {
    std::string got;
    if (!(is >> got) || got != key) throw fail("expected key '" + std::string(key) + "'");
  };

  PolicyArtifact art;
  expect_key("profile");
  std::string label;
  is >> label;
  art.profile = parse_profile(label);
  expect_key("gamma");
  is >> art.manifest.gamma;
  expect_key("episodes");
  is >> art.manifest.episodes;
  expect_key("seed");
  is >> art.manifest.seed;
  expect_key("confighash");
  is >> std::hex >> art.manifest.config_hash >> std::dec;
  if (!is) throw fail("truncated header");

  art.disc = DiscretizationSpec::read(is);
  expect_key("dischash");
  std::uint64_t stored_hash = 0;
  is >> std::hex >> stored_hash >> std::dec;
  if (!is) throw fail("truncated discretization hash");
  if (stored_hash != art.disc.hash()) throw fail("discretization hash mismatch");

  expect_key("rows");
  std::size_t n = 0;
  is >> n;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t s = 0;
    int a = 0;
    double v = 0.0;
    if (!(is >> s >> a >> v)) throw fail("truncated Q rows");
    if (a < 0 || a >= kNumActions) throw fail("action index out of range");
    art.q.row(s).at(static_cast<std::size_t>(a)) = v;
  }
  expect_key("end");
  return art;
}

// ---------------------------------------------------------------------------
// The investor agent
// ---------------------------------------------------------------------------
InvestorAgent::InvestorAgent(std::string name, InvestorBrain* brain,
                             DiscretizationSpec disc)
    : Agent(std::move(name)), brain_(brain), disc_(disc) {
  if (brain_ == nullptr)
    throw std::invalid_argument("InvestorAgent: null brain");
}

StateVector InvestorAgent::observe(Simulation& sim, int minute) {
  const LobMetrics lm = sim.book().empty()
                            ? LobMetrics{}
                            : lob_metrics(sim.book().snapshot(
                                  std::numeric_limits<std::size_t>::max()));
  if (lm.spread) spread_cf_ = static_cast<double>(*lm.spread);
  if (lm.depth) depth_cf_ = static_cast<double>(*lm.depth);

  while (!quotes_.empty() && quotes_.front().minute < minute - 5) quotes_.pop_front();
  while (!fills_.empty() && fills_.front().minute < minute - 5) fills_.pop_front();
  OwnQuoteSummary qs;
  for (const HistRec& r : quotes_) {
    qs.count += 1.0;
    qs.mean_dist += r.dist;
    qs.volume += static_cast<double>(r.size);
  }
  if (!quotes_.empty()) qs.mean_dist /= static_cast<double>(quotes_.size());
  OwnTradeSummary ts;
  for (const HistRec& f : fills_) {
    ts.volume += static_cast<double>(f.size);
    ts.mean_dist += f.dist;
    ts.net += static_cast<double>(f.sign * f.size);
  }
  if (!fills_.empty()) ts.mean_dist /= static_cast<double>(fills_.size());

  const Account& acct = sim.account(this);
  const auto& marks = sim.traded_marks();
  const int t = std::min(minute, static_cast<int>(marks.size()) - 1);
  return build_state_vector(acct.cash, acct.holdings, marks, t, spread_cf_, depth_cf_,
                            qs, ts);
}

void InvestorAgent::execute(Simulation& sim, int action) {
  const ActionSpec spec = action_spec(action);
  if (spec.direction == Act::Hold) return;
  sim.cancel_all(this);
  const std::optional<double> mid = sim.mid();
  const double anchor = mid ? *mid : static_cast<double>(sim.mark_price());
  const Price px = spec.direction == Act::Buy
                       ? static_cast<Price>(std::floor(anchor)) - spec.offset_units()
                       : static_cast<Price>(std::ceil(anchor)) + spec.offset_units();
  if (px < 1) return;
  sim.submit(this, spec.direction == Act::Buy ? Side::Buy : Side::Sell, px, spec.size);
  quotes_.push_back({sim.current_minute(),
                     std::abs(static_cast<double>(px) - anchor), spec.size, 0});
}

void InvestorAgent::on_wakeup(Simulation& sim) {
  const int minute = sim.current_minute();
  const StateVector s = observe(sim, minute);
  const std::uint32_t sd = disc_.discretize(s);
  const Money pv = mark_to_market(sim.account(this), sim.mark_price());
  if (!have_prev_) {
    traj_.initial_pv = pv;
  } else {
    const Money r = step_reward(pv, prev_pv_);
    traj_.rewards.push_back(r);
    brain_->observe(traj_.disc.back(), traj_.actions.back(), static_cast<double>(r), sd,
                    false);
  }
  const int action = brain_->act(s, sd, sim.rng(this));
  traj_.states.push_back(s);
  traj_.disc.push_back(sd);
  traj_.marks.push_back(static_cast<double>(sim.mark_price()));
  traj_.actions.push_back(action);
  execute(sim, action);
  prev_pv_ = pv;
  have_prev_ = true;
  sim.schedule_wakeup(this, static_cast<Timestamp>(minute + 1) * kNsPerMinute);
}

void InvestorAgent::on_day_end(Simulation& sim) {
  if (!have_prev_) return;
  const StateVector s = observe(sim, sim.day_minutes());
  const std::uint32_t sd = disc_.discretize(s);
  const Money pv = mark_to_market(sim.account(this), sim.mark_price());
  const Money r = step_reward(pv, prev_pv_);
  traj_.rewards.push_back(r);
  brain_->observe(traj_.disc.back(), traj_.actions.back(), static_cast<double>(r), sd,
                  true);
  traj_.states.push_back(s);
  traj_.disc.push_back(sd);
  traj_.marks.push_back(static_cast<double>(sim.mark_price()));
  traj_.final_pv = pv;
}

void InvestorAgent::on_fill(Simulation& sim, const Trade& trade, Side my_side,
                            std::int64_t, double mid_before) {
  const double dist =
      std::isnan(mid_before) ? 0.0 : std::abs(static_cast<double>(trade.price) - mid_before);
  fills_.push_back({sim.current_minute(), dist, trade.size,
                    my_side == Side::Buy ? 1 : -1});
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
PolicyArtifact train_online(const EpisodeRunner& run_episode,
                            const DiscretizationSpec& disc, const TrainConfig& cfg,
                            const SubrationalityProfile& profile) {
  validate(profile);
  if (cfg.episodes < 1)
    throw std::invalid_argument("train_online: episodes must be >= 1");
  if (!(cfg.alpha > 0 && cfg.alpha <= 1))
    throw std::invalid_argument("train_online: alpha must lie in (0,1]");

  PolicyArtifact art;
  art.profile = profile;
  art.disc = disc;
  QLearnerBrain brain(art.q, cfg, profile);
  for (int episode = 0; episode < cfg.episodes; ++episode) {
    brain.set_epsilon(epsilon_at(cfg, episode));
    run_episode(episode, mix64(cfg.seed, static_cast<std::uint64_t>(episode)), brain);
  }
  art.manifest = {config_fingerprint(cfg, profile, disc), cfg.episodes, cfg.seed,
                  cfg.gamma};
  return art;
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------
PlanResult plan_with_model(const TabularMdp& mdp, const DiscretizationSpec& disc,
                           const SubrationalityProfile& profile, const PlanConfig& cfg) {
  validate(profile);
  if (mdp.cells.empty()) throw std::invalid_argument("plan_with_model: empty model");

  const double gamma = profile_gamma(profile, cfg.gamma);
  const auto* prospect = std::get_if<Prospect>(&profile);
  double omega = 0.0;
  if (const auto* o = std::get_if<Optimistic>(&profile)) omega = o->omega;
  if (const auto* p = std::get_if<Pessimistic>(&profile)) omega = p->omega;

  // The prospect transform is value-independent, so apply it to a working
  // copy of the cells up front: probabilities through w()/renormalization,
  // rewards through the utility.
  const std::unordered_map<std::uint32_t, std::array<MdpCell, kNumActions>>* cells =
      &mdp.cells;
  std::unordered_map<std::uint32_t, std::array<MdpCell, kNumActions>> shaped;
  if (prospect != nullptr) {
    shaped = mdp.cells;
    for (auto& [s, acts] : shaped) {
      for (auto& cell : acts) {
        double total = 0.0;
        for (double& p : cell.prob) {
          p = probability_weight(p, prospect->delta);
          total += p;
        }
        if (total > 0)
          for (double& p : cell.prob) p /= total;
        for (double& r : cell.reward) r = prospect_utility(r, prospect->c);
      }
    }
    cells = &shaped;
  }

  std::unordered_map<std::uint32_t, double> value;
  value.reserve(cells->size());
  for (const auto& [s, acts] : *cells) value.emplace(s, 0.0);
  const auto value_of = [&value](std::uint32_t s) {
    const auto it = value.find(s);
    return it == value.end() ? 0.0 : it->second;
  };

  // One profile-shaped backup for a single (state, action) cell.
  std::vector<double> scratch;
  const auto backup = [&](const MdpCell& cell) {
    if (cell.next.empty()) return 0.0;
    if (omega == 0.0) {
      double q = 0.0;
      for (std::size_t i = 0; i < cell.next.size(); ++i)
        q += cell.prob[i] * (cell.reward[i] + gamma * value_of(cell.next[i]));
      return q;
    }
    scratch.resize(cell.next.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cell.next.size(); ++i) {
      scratch[i] = cell.reward[i] + gamma * value_of(cell.next[i]);
      top = std::max(top, omega * scratch[i]);
    }
    double wsum = 0.0, wg = 0.0;
    for (std::size_t i = 0; i < cell.next.size(); ++i) {
      const double w = cell.prob[i] * std::exp(omega * scratch[i] - top);
      wsum += w;
      wg += w * scratch[i];
    }
    return wsum > 0 ? wg / wsum : 0.0;
  };

  int sweep = 0;
  double residual = std::numeric_limits<double>::infinity();
  for (; sweep < cfg.max_sweeps && residual > cfg.tol; ++sweep) {
    residual = 0.0;
    for (const auto& [s, acts] : *cells) {
      double best = -std::numeric_limits<double>::infinity();
      for (const MdpCell& cell : acts) best = std::max(best, backup(cell));
      double& v = value[s];
      residual = std::max(residual, std::abs(best - v));
      v = best;
    }
  }
  if (residual > cfg.tol) {
    std::ostringstream oss;
    oss << "plan_with_model: no convergence after " << sweep
        << " sweeps (residual=" << residual << ", tol=" << cfg.tol << ")";
    throw std::runtime_error(oss.str());
  }

  PlanResult result;
  result.sweeps = sweep;
  result.residual = residual;
  result.artifact.profile = profile;
  result.artifact.disc = disc;
  for (const auto& [s, acts] : *cells) {
    QTable::Row& row = result.artifact.q.row(s);
    for (int a = 0; a < kNumActions; ++a)
      row[static_cast<std::size_t>(a)] = backup(acts[static_cast<std::size_t>(a)]);
  }
  {
    std::ostringstream oss;
    oss << "plan " << profile_label(profile) << ' ' << fmt(cfg.gamma) << ' '
        << fmt(cfg.tol) << ' ' << disc.hash();
    result.artifact.manifest = {fnv1a64(oss.str()), sweep, 0, cfg.gamma};
  }
  return result;
}

}  // namespace msim
