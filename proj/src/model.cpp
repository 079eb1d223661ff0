#include "msim/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msim {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& tok, const char* what) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error(std::string("ensemble checkpoint: bad ") + what + " '" +
                             tok + "'");
  return v;
}

double softplus_floor(double raw) {
  // max(x,0) + log1p(exp(-|x|)) is the overflow-safe softplus
  return std::max(raw, 0.0) + std::log1p(std::exp(-std::abs(raw))) + 1e-6;
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void expect(std::istream& in, const char* tag) {
  std::string tok;
  if (!(in >> tok) || tok != tag)
    throw std::runtime_error(std::string("ensemble checkpoint: expected '") + tag +
                             "', got '" + tok + "'");
}

void write_matrix(std::ostream& out, const char* tag, const MatrixXd& m) {
  out << tag << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << fmt(m(i, j));
    out << '\n';
  }
}

MatrixXd read_matrix(std::istream& in, const char* tag) {
  expect(in, tag);
  Index rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0)
    throw std::runtime_error(std::string("ensemble checkpoint: bad dims for ") + tag);
  MatrixXd m(rows, cols);
  std::string tok;
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      if (!(in >> tok))
        throw std::runtime_error(std::string("ensemble checkpoint: truncated ") + tag);
      m(i, j) = parse_number(tok, tag);
    }
  return m;
}

template <std::size_t N>
void write_array(std::ostream& out, const char* tag, const std::array<double, N>& a) {
  out << tag;
  for (double v : a) out << ' ' << fmt(v);
  out << '\n';
}

template <std::size_t N>
std::array<double, N> read_array(std::istream& in, const char* tag) {
  expect(in, tag);
  std::array<double, N> a{};
  std::string tok;
  for (std::size_t i = 0; i < N; ++i) {
    if (!(in >> tok))
      throw std::runtime_error(std::string("ensemble checkpoint: truncated ") + tag);
    a[i] = parse_number(tok, tag);
  }
  return a;
}

// One Adam accumulator per parameter; bias-corrected, shared step counter.
struct AdamState {
  MatrixXd m, v;
  explicit AdamState(const MatrixXd& like)
      : m(MatrixXd::Zero(like.rows(), like.cols())),
        v(MatrixXd::Zero(like.rows(), like.cols())) {}
};

void adam_step(MatrixXd& w, const MatrixXd& g, AdamState& st, double lr, int t) {
  st.m = 0.9 * st.m + 0.1 * g;
  st.v = 0.999 * st.v + 0.001 * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(0.9, t);
  const double c2 = 1.0 - std::pow(0.999, t);
  w.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + 1e-8);
}

}  // namespace

std::array<double, kModelFeatures> model_features(const StateVector& s, double mark) {
  std::array<double, kModelFeatures> f{};
  for (int i = 0; i < StateVector::kFeatures; ++i) f[std::size_t(i)] = s.feature(i);
  f[kModelFeatures - 1] = mark;
  return f;
}

StateVector state_from_features(const std::array<double, kModelFeatures>& f) {
  StateVector s;
  for (int i = 0; i < StateVector::kFeatures; ++i) s.set_feature(i, f[std::size_t(i)]);
  return s;
}

std::string_view model_feature_name(int i) {
  if (i < 0 || i >= kModelFeatures)
    throw std::out_of_range("model_feature_name: index " + std::to_string(i));
  if (i == kModelFeatures - 1) return "traded_price";
  return StateVector::feature_name(i);
}

std::vector<TransitionSample> collect_transitions(const MarketConfig& cfg, int n_days,
                                                  std::uint64_t seed) {
  if (n_days < 1)
    throw std::invalid_argument("collect_transitions: n_days must be >= 1");
  std::vector<TransitionSample> out;
  out.reserve(std::size_t(n_days) * std::size_t(cfg.minutes));
  for (int d = 0; d < n_days; ++d) {
    RandomBrain brain;
    std::vector<std::unique_ptr<Agent>> extras;
    extras.push_back(
        std::make_unique<InvestorAgent>("rl 0", &brain, DiscretizationSpec{}));
    std::vector<Agent*> handles;
    Simulation sim =
        make_market(cfg, mix64(seed, std::uint64_t(d)), std::move(extras), &handles);
    const auto* investor = dynamic_cast<const InvestorAgent*>(handles.front());
    sim.run_day();
    const InvestorTrajectory& tr = investor->trajectory();
    for (std::size_t t = 0; t + 1 < tr.states.size(); ++t) {
      TransitionSample ts;
      ts.state = tr.states[t];
      ts.mark = tr.marks[t];
      ts.action = tr.actions[t];
      ts.next_state = tr.states[t + 1];
      ts.next_mark = tr.marks[t + 1];
      ts.reward = tr.rewards[t];
      out.push_back(ts);
    }
  }
  return out;
}

void GaussianMlp::init(int inputs, int outputs, int hidden, std::mt19937_64& rng) {
  if (inputs < 1 || outputs < 1 || hidden < 1)
    throw std::invalid_argument("GaussianMlp::init: bad shape");
  std::normal_distribution<double> nd;
  const auto fill = [&](MatrixXd& w, Index rows, Index cols, double stddev) {
    w.resize(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) w(i, j) = nd(rng) * stddev;
  };
  fill(w1_, hidden, inputs, std::sqrt(2.0 / inputs));
  b1_ = VectorXd::Zero(hidden);
  fill(w2_, hidden, hidden, std::sqrt(2.0 / hidden));
  b2_ = VectorXd::Zero(hidden);
  fill(w3_, 2 * outputs, hidden, 0.01);
  b3_ = VectorXd::Zero(2 * outputs);
  // start the variance head near softplus^-1(1): unit variance in the
  // normalized target space keeps early NLL gradients tame
  for (Index i = outputs; i < 2 * outputs; ++i) b3_(i) = 0.5413248546129181;
}

void GaussianMlp::forward(const MatrixXd& x, MatrixXd& mean, MatrixXd& var) const {
  if (w1_.size() == 0) throw std::logic_error("GaussianMlp::forward: uninitialized");
  if (x.rows() != w1_.cols())
    throw std::invalid_argument("GaussianMlp::forward: input rows mismatch");
  const MatrixXd a1 = ((w1_ * x).colwise() + b1_).cwiseMax(0.0);
  const MatrixXd a2 = ((w2_ * a1).colwise() + b2_).cwiseMax(0.0);
  const MatrixXd o = (w3_ * a2).colwise() + b3_;
  const Index out = w3_.rows() / 2;
  mean = o.topRows(out);
  var = o.bottomRows(out).unaryExpr([](double r) { return softplus_floor(r); });
}

double GaussianMlp::fit(const MatrixXd& x, const MatrixXd& y, const MlpConfig& cfg,
                        std::mt19937_64& rng) {
  if (w1_.size() == 0) throw std::logic_error("GaussianMlp::fit: uninitialized");
  if (x.cols() != y.cols() || x.rows() != w1_.cols() || y.rows() != w3_.rows() / 2)
    throw std::invalid_argument("GaussianMlp::fit: shape mismatch");
  const Index n = x.cols();
  const Index out = y.rows();
  AdamState sw1(w1_), sw2(w2_), sw3(w3_), sb1(b1_), sb2(b2_), sb3(b3_);
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[std::size_t(i)] = i;
  int step = 0;
  double last_nll = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // step decay: the constant-rate Adam noise floor otherwise caps accuracy
    const double lr = 10 * epoch >= 7 * cfg.epochs ? 0.1 * cfg.lr : cfg.lr;
    // warm-up: plain squared error on the mean head first; the full NLL is
    // badly conditioned while the variance is still collapsing
    const bool warmup = 10 * epoch < 4 * cfg.epochs;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_nll = 0.0;
    for (Index start = 0; start < n; start += cfg.batch) {
      const Index bn = std::min<Index>(cfg.batch, n - start);
      MatrixXd xb(x.rows(), bn), yb(out, bn);
      for (Index i = 0; i < bn; ++i) {
        xb.col(i) = x.col(order[std::size_t(start + i)]);
        yb.col(i) = y.col(order[std::size_t(start + i)]);
      }
      const MatrixXd z1 = (w1_ * xb).colwise() + b1_;
      const MatrixXd a1 = z1.cwiseMax(0.0);
      const MatrixXd z2 = (w2_ * a1).colwise() + b2_;
      const MatrixXd a2 = z2.cwiseMax(0.0);
      const MatrixXd o = (w3_ * a2).colwise() + b3_;
      const MatrixXd mu = o.topRows(out);
      const MatrixXd raw = o.bottomRows(out);
      const MatrixXd v = raw.unaryExpr([](double r) { return softplus_floor(r); });
      const MatrixXd err = mu - yb;
      epoch_nll +=
          0.5 * (v.array().log() + err.array().square() / v.array()).sum();

      const double inv = 1.0 / double(bn);
      const MatrixXd dmu = warmup
                               ? MatrixXd(err * inv)
                               : MatrixXd((err.array() / v.array()).matrix() * inv);
      const MatrixXd dv =
          (0.5 * (1.0 / v.array() - err.array().square() / v.array().square()))
              .matrix() *
          inv;
      const MatrixXd draw =
          warmup ? MatrixXd::Zero(out, bn).eval()
                 : dv.cwiseProduct(raw.unaryExpr([](double r) { return sigmoid(r); }))
                       .eval();
      MatrixXd dO(2 * out, bn);
      dO.topRows(out) = dmu;
      dO.bottomRows(out) = draw;

      MatrixXd dw3 = dO * a2.transpose();
      MatrixXd db3 = dO.rowwise().sum();
      const MatrixXd da2 = w3_.transpose() * dO;
      MatrixXd dz2 = da2.cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
      MatrixXd dw2 = dz2 * a1.transpose();
      MatrixXd db2 = dz2.rowwise().sum();
      const MatrixXd da1 = w2_.transpose() * dz2;
      MatrixXd dz1 = da1.cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
      MatrixXd dw1 = dz1 * xb.transpose();
      MatrixXd db1 = dz1.rowwise().sum();

      // global-norm clip: early NLL spikes otherwise destabilize the head
      const double gn2 = dw1.squaredNorm() + db1.squaredNorm() + dw2.squaredNorm() +
                         db2.squaredNorm() + dw3.squaredNorm() + db3.squaredNorm();
      if (gn2 > 100.0) {
        const double scale = 10.0 / std::sqrt(gn2);
        dw1 *= scale;
        db1 *= scale;
        dw2 *= scale;
        db2 *= scale;
        dw3 *= scale;
        db3 *= scale;
      }

      ++step;
      adam_step(w1_, dw1, sw1, lr, step);
      adam_step(w2_, dw2, sw2, lr, step);
      adam_step(w3_, dw3, sw3, lr, step);
      MatrixXd b1m = b1_, b2m = b2_, b3m = b3_;
      adam_step(b1m, db1, sb1, lr, step);
      adam_step(b2m, db2, sb2, lr, step);
      adam_step(b3m, db3, sb3, lr, step);
      b1_ = b1m;
      b2_ = b2m;
      b3_ = b3m;
      const double shrink = 1.0 - lr * cfg.weight_decay;
      w1_ *= shrink;
      w2_ *= shrink;
      w3_ *= shrink;
    }
    last_nll = epoch_nll / double(n);
  }
  return last_nll;
}

void GaussianMlp::write(std::ostream& out) const {
  out << "mlp " << w1_.cols() << ' ' << w1_.rows() << ' ' << outputs() << '\n';
  write_matrix(out, "w1", w1_);
  write_matrix(out, "b1", b1_);
  write_matrix(out, "w2", w2_);
  write_matrix(out, "b2", b2_);
  write_matrix(out, "w3", w3_);
  write_matrix(out, "b3", b3_);
}

GaussianMlp GaussianMlp::read(std::istream& in) {
  expect(in, "mlp");
  int inputs = 0, hidden = 0, outputs = 0;
  if (!(in >> inputs >> hidden >> outputs) || inputs < 1 || hidden < 1 || outputs < 1)
    throw std::runtime_error("ensemble checkpoint: bad mlp shape");
  GaussianMlp net;
  net.w1_ = read_matrix(in, "w1");
  net.b1_ = read_matrix(in, "b1");
  net.w2_ = read_matrix(in, "w2");
  net.b2_ = read_matrix(in, "b2");
  net.w3_ = read_matrix(in, "w3");
  net.b3_ = read_matrix(in, "b3");
  if (net.w1_.rows() != hidden || net.w1_.cols() != inputs ||
      net.w2_.rows() != hidden || net.w2_.cols() != hidden ||
      net.w3_.rows() != 2 * outputs || net.w3_.cols() != hidden ||
      net.b1_.size() != hidden || net.b2_.size() != hidden ||
      net.b3_.size() != 2 * outputs)
    throw std::runtime_error("ensemble checkpoint: inconsistent mlp shapes");
  return net;
}

VectorXd EnsembleModel::normalize_input(const std::array<double, kModelFeatures>& f,
                                        int action) const {
  VectorXd x = VectorXd::Zero(kModelInputs);
  for (int i = 0; i < kModelFeatures; ++i)
    x(i) = (f[std::size_t(i)] - in_mean_[std::size_t(i)]) / in_std_[std::size_t(i)];
  for (int i : dropped_) x(i) = 0.0;
  x(kModelFeatures + action) = 1.0;
  return x;
}

EnsembleModel::Gaussian EnsembleModel::to_raw(
    const std::array<double, kModelFeatures>& f, const MatrixXd& mean_n,
    const MatrixXd& var_n, Index col) const {
  Gaussian g;
  for (int j = 0; j < kModelOutputs; ++j) {
    const std::size_t js = std::size_t(j);
    const double base = j < kModelFeatures ? f[js] : 0.0;  // deltas vs raw reward
    g.mean[js] = base + t_mean_[js] + mean_n(j, col) * t_std_[js];
    g.var[js] = var_n(j, col) * t_std_[js] * t_std_[js];
  }
  return g;
}

EnsembleModel::Gaussian EnsembleModel::member_predict(int member, const StateVector& s,
                                                      double mark, int action) const {
  if (!fitted()) throw std::logic_error("EnsembleModel: not fitted");
  if (member < 0 || member >= members())
    throw std::out_of_range("EnsembleModel: member " + std::to_string(member));
  action_spec(action);  // validates the index
  const auto f = model_features(s, mark);
  MatrixXd mean, var;
  nets_[std::size_t(member)].forward(normalize_input(f, action), mean, var);
  return to_raw(f, mean, var, 0);
}

std::vector<EnsembleModel::Gaussian> EnsembleModel::predict(const StateVector& s,
                                                            double mark,
                                                            int action) const {
  std::vector<Gaussian> out;
  out.reserve(std::size_t(members()));
  for (int b = 0; b < members(); ++b) out.push_back(member_predict(b, s, mark, action));
  return out;
}

EnsembleModel::Gaussian EnsembleModel::mixture(const StateVector& s, double mark,
                                               int action) const {
  const std::vector<Gaussian> parts = predict(s, mark, action);
  Gaussian mix;
  const double inv = 1.0 / double(parts.size());
  for (const Gaussian& g : parts)
    for (int j = 0; j < kModelOutputs; ++j) {
      mix.mean[std::size_t(j)] += inv * g.mean[std::size_t(j)];
      mix.var[std::size_t(j)] +=
          inv * (g.var[std::size_t(j)] + g.mean[std::size_t(j)] * g.mean[std::size_t(j)]);
    }
  for (int j = 0; j < kModelOutputs; ++j) {
    const std::size_t js = std::size_t(j);
    mix.var[js] = std::max(0.0, mix.var[js] - mix.mean[js] * mix.mean[js]);
  }
  return mix;
}

std::array<double, kModelOutputs> EnsembleModel::sample(const StateVector& s,
                                                        double mark, int action,
                                                        std::mt19937_64& rng) const {
  const int b =
      members() == 1
          ? 0
          : std::uniform_int_distribution<int>(0, members() - 1)(rng);
  const Gaussian g = member_predict(b, s, mark, action);
  std::normal_distribution<double> nd;
  std::array<double, kModelOutputs> out{};
  for (int j = 0; j < kModelOutputs; ++j) {
    const std::size_t js = std::size_t(j);
    double v = g.mean[js] + nd(rng) * std::sqrt(g.var[js]);
    v = std::clamp(v, o_min_[js], o_max_[js]);
    if (j == 1)  // holdings move by at most one order per step
      v = std::clamp(v, s.holdings - double(kInvestorSize),
                     s.holdings + double(kInvestorSize));
    out[js] = v;
  }
  return out;
}

void EnsembleModel::save(const std::string& path) const {
  if (!fitted()) throw std::logic_error("EnsembleModel::save: not fitted");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("EnsembleModel::save: cannot open " + path);
  out << "msim-ensemble 1\n";
  out << "shape " << members() << ' ' << kModelInputs << ' ' << kModelOutputs << '\n';
  write_array(out, "inmean", in_mean_);
  write_array(out, "instd", in_std_);
  write_array(out, "tmean", t_mean_);
  write_array(out, "tstd", t_std_);
  write_array(out, "omin", o_min_);
  write_array(out, "omax", o_max_);
  out << "dropped " << dropped_.size();
  for (int i : dropped_) out << ' ' << i;
  out << '\n';
  for (std::size_t b = 0; b < masks_.size(); ++b) {
    out << "mask " << b << ' ' << masks_[b].size();
    for (std::uint32_t i : masks_[b]) out << ' ' << i;
    out << '\n';
  }
  for (std::size_t b = 0; b < nets_.size(); ++b) {
    out << "member " << b << '\n';
    nets_[b].write(out);
  }
  out << "end\n";
  if (!out) throw std::runtime_error("EnsembleModel::save: write failed for " + path);
}

EnsembleModel EnsembleModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("EnsembleModel::load: cannot open " + path);
  expect(in, "msim-ensemble");
  int version = 0;
  if (!(in >> version) || version != 1)
    throw std::runtime_error("EnsembleModel::load: unsupported version");
  expect(in, "shape");
  int members = 0, inputs = 0, outputs = 0;
  if (!(in >> members >> inputs >> outputs) || members < 1 ||
      inputs != kModelInputs || outputs != kModelOutputs)
    throw std::runtime_error("EnsembleModel::load: shape mismatch");
  EnsembleModel model;
  model.in_mean_ = read_array<kModelFeatures>(in, "inmean");
  model.in_std_ = read_array<kModelFeatures>(in, "instd");
  model.t_mean_ = read_array<kModelOutputs>(in, "tmean");
  model.t_std_ = read_array<kModelOutputs>(in, "tstd");
  model.o_min_ = read_array<kModelOutputs>(in, "omin");
  model.o_max_ = read_array<kModelOutputs>(in, "omax");
  expect(in, "dropped");
  std::size_t n_dropped = 0;
  if (!(in >> n_dropped)) throw std::runtime_error("EnsembleModel::load: bad dropped");
  for (std::size_t i = 0; i < n_dropped; ++i) {
    int idx = 0;
    if (!(in >> idx) || idx < 0 || idx >= kModelFeatures)
      throw std::runtime_error("EnsembleModel::load: bad dropped index");
    model.dropped_.push_back(idx);
  }
  for (int b = 0; b < members; ++b) {
    expect(in, "mask");
    std::size_t idx = 0, count = 0;
    if (!(in >> idx >> count) || idx != std::size_t(b))
      throw std::runtime_error("EnsembleModel::load: bad mask header");
    std::vector<std::uint32_t> mask(count);
    for (std::size_t i = 0; i < count; ++i)
      if (!(in >> mask[i])) throw std::runtime_error("EnsembleModel::load: bad mask");
    model.masks_.push_back(std::move(mask));
  }
  for (int b = 0; b < members; ++b) {
    expect(in, "member");
    std::size_t idx = 0;
    if (!(in >> idx) || idx != std::size_t(b))
      throw std::runtime_error("EnsembleModel::load: bad member header");
    model.nets_.push_back(GaussianMlp::read(in));
  }
  expect(in, "end");
  return model;
}

EnsembleModel fit_ensemble(const std::vector<TransitionSample>& samples, int members,
                           const MlpConfig& cfg, std::uint64_t seed) {
  if (samples.size() < 100)
    throw std::invalid_argument("fit_ensemble: need at least 100 samples, have " +
                                std::to_string(samples.size()));
  if (members < 1) throw std::invalid_argument("fit_ensemble: members must be >= 1");
  if (cfg.hidden < 1 || cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0.0))
    throw std::invalid_argument("fit_ensemble: bad training config");

  const Index n = Index(samples.size());
  MatrixXd feats(kModelFeatures, n);
  MatrixXd targets(kModelOutputs, n);
  std::vector<int> actions(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const TransitionSample& ts = samples[std::size_t(i)];
    action_spec(ts.action);
    actions[std::size_t(i)] = ts.action;
    const auto f = model_features(ts.state, ts.mark);
    const auto fn = model_features(ts.next_state, ts.next_mark);
    for (int j = 0; j < kModelFeatures; ++j) {
      feats(j, i) = f[std::size_t(j)];
      targets(j, i) = fn[std::size_t(j)] - f[std::size_t(j)];
    }
    targets(kModelOutputs - 1, i) = double(ts.reward);
  }

  EnsembleModel model;
  for (int j = 0; j < kModelFeatures; ++j) {
    const std::size_t js = std::size_t(j);
    model.in_mean_[js] = feats.row(j).mean();
    model.in_std_[js] =
        std::sqrt((feats.row(j).array() - model.in_mean_[js]).square().mean());
    if (model.in_std_[js] < 1e-12) {
      std::cerr << "warning: model input feature '" << model_feature_name(j)
                << "' is constant in the training set; dropping it\n";
      model.dropped_.push_back(j);
      model.in_std_[js] = 1.0;
    }
  }
  for (int j = 0; j < kModelOutputs; ++j) {
    const std::size_t js = std::size_t(j);
    model.t_mean_[js] = targets.row(j).mean();
    model.t_std_[js] =
        std::sqrt((targets.row(j).array() - model.t_mean_[js]).square().mean());
    if (model.t_std_[js] < 1e-12) model.t_std_[js] = 1.0;
    if (j < kModelFeatures) {
      model.o_min_[js] = std::min(feats.row(j).minCoeff(),
                                  (feats.row(j) + targets.row(j)).minCoeff());
      model.o_max_[js] = std::max(feats.row(j).maxCoeff(),
                                  (feats.row(j) + targets.row(j)).maxCoeff());
    } else {
      model.o_min_[js] = targets.row(j).minCoeff();
      model.o_max_[js] = targets.row(j).maxCoeff();
    }
  }

  MatrixXd x = MatrixXd::Zero(kModelInputs, n);
  MatrixXd y(kModelOutputs, n);
  for (Index i = 0; i < n; ++i) {
    for (int j = 0; j < kModelFeatures; ++j)
      x(j, i) = (feats(j, i) - model.in_mean_[std::size_t(j)]) /
                model.in_std_[std::size_t(j)];
    for (int j : model.dropped_) x(j, i) = 0.0;
    x(kModelFeatures + actions[std::size_t(i)], i) = 1.0;
    for (int j = 0; j < kModelOutputs; ++j)
      y(j, i) = (targets(j, i) - model.t_mean_[std::size_t(j)]) /
                model.t_std_[std::size_t(j)];
  }

  for (int b = 0; b < members; ++b) {
    std::mt19937_64 rng(mix64(seed, std::uint64_t(b)));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<std::uint32_t> mask(static_cast<std::size_t>(n));
    MatrixXd xb(kModelInputs, n), yb(kModelOutputs, n);
    for (Index i = 0; i < n; ++i) {
      const Index row = pick(rng);
      mask[std::size_t(i)] = std::uint32_t(row);
      xb.col(i) = x.col(row);
      yb.col(i) = y.col(row);
    }
    GaussianMlp net;
    net.init(kModelInputs, kModelOutputs, cfg.hidden, rng);
    net.fit(xb, yb, cfg, rng);
    model.nets_.push_back(std::move(net));
    model.masks_.push_back(std::move(mask));
  }
  return model;
}

TabularMdp discretize_model(const EnsembleModel& model,
                            const std::vector<TransitionSample>& samples,
                            const DiscretizationSpec& spec, int samples_per_cell,
                            std::uint64_t seed) {
  if (!model.fitted()) throw std::invalid_argument("discretize_model: model not fitted");
  if (samples.empty()) throw std::invalid_argument("discretize_model: no samples");
  if (samples_per_cell < 1)
    throw std::invalid_argument("discretize_model: samples_per_cell must be >= 1");

  // observed anchors per visited cell; a handful is enough, the spread of the
  // cell is already captured by the model's predictive variance
  constexpr int kMaxReps = 8;
  std::map<std::uint32_t, std::vector<std::array<double, kModelFeatures>>> reps;
  for (const TransitionSample& ts : samples) {
    auto& v = reps[spec.discretize(ts.state)];
    if (int(v.size()) < kMaxReps) v.push_back(model_features(ts.state, ts.mark));
  }

  TabularMdp mdp;
  const int B = model.members();
  std::normal_distribution<double> nd;
  for (const auto& [idx, rv] : reps) {
    const int R = int(rv.size());
    MatrixXd x(kModelInputs, Index(R) * kNumActions);
    for (int a = 0; a < kNumActions; ++a)
      for (int r = 0; r < R; ++r)
        x.col(Index(a) * R + r) = model.normalize_input(rv[std::size_t(r)], a);
    std::vector<MatrixXd> mu(static_cast<std::size_t>(B));
    std::vector<MatrixXd> var(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b)
      model.nets_[std::size_t(b)].forward(x, mu[std::size_t(b)], var[std::size_t(b)]);

    std::mt19937_64 rng(mix64(seed, idx));
    auto& row = mdp.cells[idx];
    for (int a = 0; a < kNumActions; ++a) {
      std::map<std::uint32_t, std::pair<long, double>> tally;  // count, reward sum
      for (int k = 0; k < samples_per_cell; ++k) {
        const int r =
            R == 1 ? 0 : std::uniform_int_distribution<int>(0, R - 1)(rng);
        const int b =
            B == 1 ? 0 : std::uniform_int_distribution<int>(0, B - 1)(rng);
        const Index col = Index(a) * R + r;
        const auto& anchor = rv[std::size_t(r)];
        std::array<double, kModelFeatures> nf{};
        for (int j = 0; j < kModelFeatures; ++j) {
          const std::size_t js = std::size_t(j);
          const double mean = anchor[js] + model.t_mean_[js] +
                              mu[std::size_t(b)](j, col) * model.t_std_[js];
          const double sd =
              std::sqrt(var[std::size_t(b)](j, col)) * model.t_std_[js];
          double v = mean + nd(rng) * sd;
          v = std::clamp(v, model.o_min_[js], model.o_max_[js]);
          if (j == 1)
            v = std::clamp(v, anchor[1] - double(kInvestorSize),
                           anchor[1] + double(kInvestorSize));
          nf[js] = v;
        }
        const std::uint32_t succ = spec.discretize(state_from_features(nf));
        auto& t = tally[succ];
        t.first += 1;
        t.second += portfolio_value(nf) - portfolio_value(anchor);
      }
      MdpCell cell;
      for (const auto& [succ, acc] : tally) {
        cell.next.push_back(succ);
        cell.prob.push_back(double(acc.first) / double(samples_per_cell));
        cell.reward.push_back(acc.second / double(acc.first));
      }
      row[std::size_t(a)] = std::move(cell);
    }
  }

  // close the state space: successors that were never visited become
  // absorbing zero-reward cells so planning always has a row to look up
  std::set<std::uint32_t> missing;
  for (const auto& [idx, row] : mdp.cells)
    for (const MdpCell& cell : row)
      for (const std::uint32_t nx : cell.next)
        if (!mdp.cells.count(nx)) missing.insert(nx);
  for (const std::uint32_t nx : missing) {
    auto& row = mdp.cells[nx];
    for (auto& cell : row) cell = MdpCell{{nx}, {1.0}, {0.0}};
    mdp.flagged.push_back(nx);
  }
  return mdp;
}

std::string_view fidelity_var_name(int i) {
  static constexpr std::string_view kNames[kFidelityVars] = {
      "quote_volume", "spread",       "depth",      "holdings",   "cash",
      "trade_volume", "traded_price", "momentum30", "sigma30",    "reward"};
  if (i < 0 || i >= kFidelityVars)
    throw std::out_of_range("fidelity_var_name: index " + std::to_string(i));
  return kNames[std::size_t(i)];
}

std::array<double, kFidelityVars> fidelity_vars(const StateVector& prev,
                                                double prev_mark,
                                                const StateVector& next,
                                                double next_mark) {
  const auto pf = model_features(prev, prev_mark);
  const auto nf = model_features(next, next_mark);
  return {nf[10], nf[5],  nf[6], nf[1], nf[0],
          nf[11], nf[14], nf[4], nf[7], portfolio_value(nf) - portfolio_value(pf)};
}

FidelityReport fidelity_from_series(
    const std::vector<std::array<double, kFidelityVars>>& truth,
    const std::vector<std::array<double, kFidelityVars>>& model) {
  if (truth.empty() || truth.size() != model.size())
    throw std::invalid_argument("fidelity_from_series: series must align");
  const std::size_t n = truth.size();
  FidelityReport report;
  for (int v = 0; v < kFidelityVars; ++v) {
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = truth[i][std::size_t(v)];
      b[i] = model[i][std::size_t(v)];
    }
    double lo = a[0], hi = a[0];
    for (double x : a) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    for (double x : b) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    FidelityRow row;
    row.variable = std::string(fidelity_var_name(v));
    const double range = hi - lo;
    if (range > 0.0) {
      double se = 0.0;
      for (std::size_t i = 0; i < n; ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
      row.rmse = std::sqrt(se / double(n)) / range;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      double emd = 0.0;
      for (std::size_t i = 0; i < n; ++i) emd += std::abs(a[i] - b[i]);
      row.emd = emd / double(n) / range;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

FidelityReport evaluate_fidelity(const EnsembleModel& model, const MarketConfig& cfg,
                                 int n_days, std::uint64_t seed) {
  if (!model.fitted())
    throw std::invalid_argument("evaluate_fidelity: model not fitted");
  if (n_days < 1) throw std::invalid_argument("evaluate_fidelity: n_days must be >= 1");
  std::vector<std::array<double, kFidelityVars>> truth, pred;
  for (int d = 0; d < n_days; ++d) {
    const std::uint64_t day_seed = mix64(seed, std::uint64_t(d));
    RandomBrain brain;
    std::vector<std::unique_ptr<Agent>> extras;
    extras.push_back(
        std::make_unique<InvestorAgent>("rl 0", &brain, DiscretizationSpec{}));
    std::vector<Agent*> handles;
    Simulation sim = make_market(cfg, day_seed, std::move(extras), &handles);
    const auto* investor = dynamic_cast<const InvestorAgent*>(handles.front());
    sim.run_day();
    const InvestorTrajectory& tr = investor->trajectory();
    std::mt19937_64 mrng(mix64(day_seed, fnv1a64("fidelity")));
    for (std::size_t t = 0; t + 1 < tr.states.size(); ++t) {
      truth.push_back(
          fidelity_vars(tr.states[t], tr.marks[t], tr.states[t + 1], tr.marks[t + 1]));
      const auto o = model.sample(tr.states[t], tr.marks[t], tr.actions[t], mrng);
      auto row = fidelity_vars(tr.states[t], tr.marks[t],
                               state_from_features(successor_features(o)),
                               o[kModelFeatures - 1]);
      row[kFidelityVars - 1] = o[kModelOutputs - 1];  // the reward head's draw
      pred.push_back(row);
    }
  }
  return fidelity_from_series(truth, pred);
}

void FidelityReport::to_csv(std::ostream& out, const std::string& run_tag) const {
  out << "variable,emd,rmse,run\n";
  for (const FidelityRow& row : rows)
    out << row.variable << ',' << fmt(row.emd) << ',' << fmt(row.rmse) << ','
        << run_tag << '\n';
}

}  // namespace msim
