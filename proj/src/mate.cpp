#include "matekit/mate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "matekit/error.hpp"
#include "matekit/parallel.hpp"

namespace matekit {

namespace {

bool moves_any(const PanelDataset& panel, Index i) {
  for (int t = 1; t < panel.n_periods(); ++t)
    if (panel.treatment(i, t) != panel.treatment(i, 0)) return true;
  return false;
}

// Scores a moment divides by, as (origin, period, destination, period).
std::vector<std::array<int, 4>> denominators(const MomentSpec& m, int s, int t) {
  if (m.kind == MomentSpec::Kind::kappa) {
    const int a = std::min(s, t), b = std::max(s, t);
    return {{m.c, a, m.d, b}, {m.d, a, m.c, b}};
  }
  return {{m.c, s, m.c, t}, {m.c, s, m.d, t}};
}

std::vector<Index> support_points(const PropensityModel& model) {
  std::vector<Index> out;
  for (Index p = 0; p < model.n_points(); ++p)
    if (model.points()[static_cast<std::size_t>(p)].weight > 0.0 && model.mover_prob(p) > 0.0) out.push_back(p);
  return out;
}

std::string describe_score(const std::array<int, 4>& e) {
  std::ostringstream os;
  os << "P(J_" << e[1] << "=" << e[0] << ", J_" << e[3] << "=" << e[2] << ")";
  return os.str();
}

}  // namespace

std::string MomentSpec::label() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::rho:
      os << "rho";
      break;
    case Kind::neg_rho:
      os << "negrho";
      break;
    case Kind::kappa:
      os << "kappa";
      break;
  }
  os << '[' << c << ',' << d << ']';
  return os.str();
}

std::vector<Index> screen_points(const PropensityModel& model, int s, int t, const std::vector<MomentSpec>& specs,
                                 const std::vector<std::vector<char>>* needed) {
  std::set<Index> excluded;
  const auto support = support_points(model);
  for (auto p : support) {
    for (std::size_t k = 0; k < specs.size(); ++k) {
      if (needed && !(*needed)[static_cast<std::size_t>(p)][k]) continue;
      for (const auto& e : denominators(specs[k], s, t)) {
        const double v = model.score(e[0], e[1], e[2], e[3], p);
        const auto& label = model.points()[static_cast<std::size_t>(p)].label;
        if (v <= 0.0)
          throw Error(Errc::InfeasibleChain,
                      specs[k].label() + " needs " + describe_score(e) + " > 0 at point " + label);
        if (model.is_trimmed(e[0], e[1], e[2], e[3], p)) {
          excluded.insert(p);
        } else if (v < 1e-12) {
          throw Error(Errc::DegenerateDenominator,
                      specs[k].label() + ": " + describe_score(e) + " = " + std::to_string(v) + " at point " + label);
        }
      }
    }
  }
  if (!support.empty() && excluded.size() == support.size())
    throw Error(Errc::InfeasibleChain, "every support point is trimmed for the requested moments");
  return {excluded.begin(), excluded.end()};
}

MomentWeights moment_weights(const PanelDataset& panel, const PropensityModel& model, int s, int t,
                             const std::vector<MomentSpec>& specs, const std::vector<Index>& excluded_points) {
  const int T = panel.n_periods();
  if (s == t || s < 0 || t < 0 || s >= T || t >= T)
    throw Error(Errc::BadPeriodPair, "invalid period pair (" + std::to_string(s) + "," + std::to_string(t) + ")");
  const Index N = panel.n_units();
  const auto& w = panel.weights();
  MomentWeights mw;
  mw.s = s;
  mw.t = t;
  mw.specs = specs;
  mw.excluded_points = excluded_points;
  std::vector<char> dropped(static_cast<std::size_t>(model.n_points()), 0);
  for (auto p : excluded_points) dropped[static_cast<std::size_t>(p)] = 1;

  mw.retained.resize(N);
  mw.mover.resize(N);
  mw.dy.resize(N);
  double movers = 0.0;
  for (Index i = 0; i < N; ++i) {
    mw.retained(i) = dropped[static_cast<std::size_t>(model.point_of(i))] ? 0.0 : 1.0;
    mw.mover(i) = moves_any(panel, i) ? 1.0 : 0.0;
    mw.dy(i) = panel.outcome(i, std::max(s, t)) - panel.outcome(i, std::min(s, t));
    mw.n_retained += w(i) * mw.retained(i);
    movers += w(i) * mw.retained(i) * mw.mover(i);
  }
  if (movers <= 0.0) throw Error(Errc::NoMovers, "no movers in the retained sample");
  mw.mover_share = movers / mw.n_retained;

  const double sign = t > s ? -1.0 : 1.0;
  const int a = std::min(s, t), b = std::max(s, t);
  mw.W = Eigen::MatrixXd::Zero(N, static_cast<Index>(specs.size()));
  for (Index i = 0; i < N; ++i) {
    if (mw.retained(i) == 0.0) continue;
    const Index p = model.point_of(i);
    const double ratio = model.mover_prob(p) / mw.mover_share;
    if (ratio == 0.0) continue;
    for (std::size_t k = 0; k < specs.size(); ++k) {
      const auto& m = specs[k];
      double v = 0.0;
      auto inv = [&](bool hit, double e) {
        if (!hit) return 0.0;
        if (e <= 0.0) throw Error(Errc::DegenerateDenominator, m.label() + ": unit sits in a zero-probability cell");
        return 1.0 / e;
      };
      if (m.kind == MomentSpec::Kind::kappa) {
        const int ja = panel.treatment(i, a), jb = panel.treatment(i, b);
        v = 0.5 * (inv(ja == m.c && jb == m.d, model.score(m.c, a, m.d, b, p)) -
                   inv(ja == m.d && jb == m.c, model.score(m.d, a, m.c, b, p)));
      } else {
        if (panel.treatment(i, s) != m.c) continue;
        const int jt = panel.treatment(i, t);
        v = sign * (inv(jt == m.c, model.score(m.c, s, m.c, t, p)) - inv(jt == m.d, model.score(m.c, s, m.d, t, p)));
        if (m.kind == MomentSpec::Kind::neg_rho) v = -v;
      }
      mw.W(i, static_cast<Index>(k)) = v * ratio;
    }
  }
  return mw;
}

Eigen::VectorXd influence_known(const PanelDataset& panel, const MomentWeights& mw, const Eigen::VectorXd& combined,
                                double point) {
  const Index N = panel.n_units();
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(N);
  for (Index i = 0; i < N; ++i)
    if (mw.retained(i) != 0.0) phi(i) = mw.dy(i) * combined(i) - point;
  return phi;
}

Eigen::VectorXd influence_adjusted(const PanelDataset& panel, const PropensityModel& model, const MomentWeights& mw,
                                  const Eigen::VectorXd& combined, double point) {
  if (model.kind() != PropensityKind::cell_means)
    throw Error(Errc::Precondition, "the adjusted influence function needs a cell-means first step");
  const Index N = panel.n_units();
  const int J = panel.n_treatments();
  const Index P = model.n_points();
  const auto& w = panel.weights();
  const int s = mw.s, t = mw.t;

  auto cell = [&](Index i) { return (model.point_of(i) * J + panel.treatment(i, s)) * J + panel.treatment(i, t); };
  Eigen::VectorXd cell_sum = Eigen::VectorXd::Zero(P * J * J);
  Eigen::VectorXd cell_n = Eigen::VectorXd::Zero(P * J * J);
  Eigen::VectorXd S = Eigen::VectorXd::Zero(P);
  Eigen::VectorXd Mv = Eigen::VectorXd::Zero(P);
  for (Index i = 0; i < N; ++i) {
    if (mw.retained(i) == 0.0) continue;
    cell_sum(cell(i)) += w(i) * mw.dy(i);
    cell_n(cell(i)) += w(i);
    S(model.point_of(i)) += w(i) * mw.dy(i) * combined(i);
    Mv(model.point_of(i)) += w(i) * mw.mover(i);
  }
  Eigen::VectorXd D = Eigen::VectorXd::Zero(P);
  for (Index p = 0; p < P; ++p)
    if (Mv(p) > 0.0) D(p) = S(p) * mw.mover_share / Mv(p);

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(N);
  for (Index i = 0; i < N; ++i) {
    if (mw.retained(i) == 0.0 || w(i) <= 0.0) continue;
    const Index c = cell(i);
    const double mu = cell_sum(c) / cell_n(c);
    phi(i) = combined(i) * (mw.dy(i) - mu) + mw.mover(i) * (D(model.point_of(i)) - point) / mw.mover_share;
  }
  return phi;
}

std::string to_string(MateMethod m) {
  switch (m) {
    case MateMethod::prop3:
      return "prop3";
    case MateMethod::prop3_corollary:
      return "corollary";
    case MateMethod::prop4:
      return "prop4";
    case MateMethod::prop3prime:
      return "prop3prime";
    case MateMethod::prop4prime:
      return "prop4prime";
  }
  return "unknown";
}

std::string to_string(SeMethod m) {
  switch (m) {
    case SeMethod::bootstrap:
      return "bootstrap";
    case SeMethod::influence_known:
      return "influence_known";
    case SeMethod::influence_adjusted:
      return "influence_adjusted";
    case SeMethod::influence_auto:
      return "influence";
    case SeMethod::none:
      return "none";
  }
  return "unknown";
}

SeMethod se_method_from_string(const std::string& s) {
  if (s == "bootstrap") return SeMethod::bootstrap;
  if (s == "influence_known" || s == "known") return SeMethod::influence_known;
  if (s == "influence_adjusted" || s == "adjusted") return SeMethod::influence_adjusted;
  if (s == "influence" || s == "auto") return SeMethod::influence_auto;
  if (s == "none") return SeMethod::none;
  throw Error(Errc::BadConfig, "unknown standard-error method '" + s + "'");
}

std::string MateEstimate::estimand_label() const {
  std::ostringstream os;
  if (estimand == Estimand::average)
    os << "avg(MATE[" << target << "," << std::min(s, t) << "],MATE[" << target << "," << std::max(s, t) << "])";
  else
    os << "MATE[" << target << "," << t << "]";
  return os.str();
}

nlohmann::json MateEstimate::to_json() const {
  nlohmann::json j;
  j["target"] = target;
  j["estimand"] = estimand_label();
  j["method"] = to_string(method);
  j["periods"] = {{"s", s}, {"t", t}};
  j["chain"] = chain.nodes;
  std::vector<std::string> modes;
  for (auto m : chain.modes) modes.push_back(to_string(m));
  j["link_modes"] = modes;
  j["link_weights"] = chain.weights;
  j["moments"] = moments;
  j["estimate"] = point;
  if (std::isfinite(se))
    j["se"] = se;
  else
    j["se"] = nullptr;
  j["se_method"] = to_string(se_method);
  if (se_method == SeMethod::bootstrap) j["bootstrap"] = {{"ok", bootstrap_ok}, {"failed", bootstrap_failed}};
  j["n_effective"] = n_effective;
  j["n_retained"] = n_retained;
  j["mover_share"] = mover_share;
  j["trimming"] = {{"excluded_points", excluded_points}, {"excluded_weight", excluded_weight}};
  std::vector<std::string> assumptions{"CPT"};
  if (method != MateMethod::prop3_corollary) assumptions.push_back("CEH");
  const bool reverse_period = (method == MateMethod::prop3 || method == MateMethod::prop3_corollary ||
                               method == MateMethod::prop3prime) &&
                              t < s;
  if (method == MateMethod::prop4 || method == MateMethod::prop4prime || reverse_period) assumptions.push_back("COI");
  j["assumptions"] = assumptions;
  j["assume_impersistence"] = assume_impersistence;
  if (corollary_weights.size())
    j["corollary_weights"] = std::vector<double>(corollary_weights.data(), corollary_weights.data() + corollary_weights.size());
  return j;
}

Eigen::VectorXd bootstrap_weights(const PanelDataset& panel, std::uint64_t seed) {
  const Index N = panel.n_units();
  std::mt19937_64 rng(seed);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(N);
  if (panel.is_unit_weighted()) {
    std::uniform_int_distribution<Index> pick(0, N - 1);
    for (Index k = 0; k < N; ++k) counts(pick(rng)) += 1.0;
    return counts;
  }
  const auto& w = panel.weights();
  std::discrete_distribution<Index> pick(w.data(), w.data() + N);
  for (Index k = 0; k < N; ++k) counts(pick(rng)) += 1.0;
  return counts * (w.sum() / static_cast<double>(N));
}

namespace {

struct Request {
  MateMethod method = MateMethod::prop3;
  std::vector<int> nodes;
  std::vector<double> weights;  // prop3 link weights
  int s = 0, t = 1;
};

struct Evaluation {
  Chain chain;
  MomentWeights mw;
  Eigen::MatrixXd coef;  // points x moments
  Eigen::VectorXd combined;
  Eigen::VectorXd wstar;  // corollary only
  double point = 0.0;
};

Evaluation evaluate(const PanelDataset& panel, const PropensityModel& model, const Request& rq) {
  if (model.n_treatments() != panel.n_treatments() || model.n_periods() != panel.n_periods())
    throw Error(Errc::Precondition, "propensity model was fitted on a different panel layout");
  Evaluation ev;
  const Index P = model.n_points();
  std::vector<MomentSpec> specs;
  std::vector<double> coefs;
  std::vector<std::vector<char>> needed;
  const auto graph = build_support_graph(panel, model, rq.s, rq.t);

  switch (rq.method) {
    case MateMethod::prop3:
    case MateMethod::prop3prime: {
      ev.chain = make_chain(graph, rq.nodes, ChainMode::prop3);
      if (!rq.weights.empty()) {
        if (rq.weights.size() != ev.chain.n_links())
          throw Error(Errc::BadConfig, "need one link weight per chain link");
        ev.chain.weights = rq.weights;
      }
      for (std::size_t m = 0; m < ev.chain.n_links(); ++m) {
        const int a = ev.chain.nodes[m], b = ev.chain.nodes[m + 1];
        const double w = ev.chain.weights[m];
        const auto& l = graph.link(a, b);
        if (!(w >= 0.0 && w <= 1.0)) throw Error(Errc::BadConfig, "link weights must lie in [0, 1]");
        if (w > 0.0 && !l.forward)
          throw Error(Errc::InfeasibleChain, "link " + std::to_string(a) + "->" + std::to_string(b) +
                                                 " has weight " + std::to_string(w) + " but condition (i) fails: " +
                                                 l.forward_block);
        if (w < 1.0 && !l.reverse)
          throw Error(Errc::InfeasibleChain, "link " + std::to_string(a) + "->" + std::to_string(b) +
                                                 " has weight " + std::to_string(w) + " but condition (ii) fails: " +
                                                 l.reverse_block);
        ev.chain.modes[m] = (w > 0.0 && w < 1.0) ? LinkMode::both : (w > 0.0 ? LinkMode::forward : LinkMode::reverse);
        if (w > 0.0) {
          specs.push_back({MomentSpec::Kind::rho, a, b});
          coefs.push_back(w);
        }
        if (w < 1.0) {
          specs.push_back({MomentSpec::Kind::neg_rho, b, a});
          coefs.push_back(1.0 - w);
        }
      }
      break;
    }
    case MateMethod::prop4:
    case MateMethod::prop4prime: {
      ev.chain = make_chain(graph, rq.nodes, ChainMode::prop4);
      for (std::size_t m = 0; m < ev.chain.n_links(); ++m) {
        specs.push_back({MomentSpec::Kind::kappa, ev.chain.nodes[m], ev.chain.nodes[m + 1]});
        coefs.push_back(1.0);
      }
      break;
    }
    case MateMethod::prop3_corollary: {
      if (panel.n_treatments() != 2) throw Error(Errc::NotBinary, "the corollary estimator needs J = 2");
      const auto& l = graph.link(0, 1);
      if (!l.forward && !l.reverse)
        throw Error(Errc::InfeasibleChain, "chain (0,1) fails both conditions: " + l.forward_block + "; " + l.reverse_block);
      ev.chain.nodes = {0, 1};
      ev.chain.modes = {LinkMode::both};
      ev.chain.weights = {std::numeric_limits<double>::quiet_NaN()};
      specs = {{MomentSpec::Kind::rho, 0, 1}, {MomentSpec::Kind::neg_rho, 1, 0}};
      ev.wstar = Eigen::VectorXd::Zero(P);
      needed.assign(static_cast<std::size_t>(P), std::vector<char>(2, 0));
      for (Index p = 0; p < P; ++p) {
        const double mp = model.mover_prob(p);
        if (mp <= 0.0) continue;
        ev.wstar(p) = std::clamp(model.score(0, rq.s, 1, rq.t, p) / mp, 0.0, 1.0);
        needed[static_cast<std::size_t>(p)][0] = ev.wstar(p) > 0.0;
        needed[static_cast<std::size_t>(p)][1] = ev.wstar(p) < 1.0;
      }
      break;
    }
  }

  const auto excluded = screen_points(model, rq.s, rq.t, specs, needed.empty() ? nullptr : &needed);
  ev.mw = moment_weights(panel, model, rq.s, rq.t, specs, excluded);
  const Index K = static_cast<Index>(specs.size());
  ev.coef = Eigen::MatrixXd::Zero(P, K);
  if (rq.method == MateMethod::prop3_corollary) {
    ev.coef.col(0) = ev.wstar;
    ev.coef.col(1) = (1.0 - ev.wstar.array()).matrix();
  } else {
    for (Index k = 0; k < K; ++k) ev.coef.col(k).setConstant(coefs[static_cast<std::size_t>(k)]);
  }
  const Index N = panel.n_units();
  ev.combined.resize(N);
  for (Index i = 0; i < N; ++i) ev.combined(i) = ev.mw.W.row(i).dot(ev.coef.row(model.point_of(i)));
  const auto& w = panel.weights();
  ev.point = (w.array() * ev.mw.retained.array() * ev.mw.dy.array() * ev.combined.array()).sum() / ev.mw.n_retained;
  return ev;
}

// Extra linearisation term from estimating w* per stratum.
Eigen::VectorXd corollary_wstar_term(const PanelDataset& panel, const PropensityModel& model, const Evaluation& ev) {
  const Index N = panel.n_units();
  const Index P = model.n_points();
  const auto& w = panel.weights();
  const auto& mw = ev.mw;
  Eigen::VectorXd S1 = Eigen::VectorXd::Zero(P), S2 = Eigen::VectorXd::Zero(P), Mv = Eigen::VectorXd::Zero(P);
  for (Index i = 0; i < N; ++i) {
    if (mw.retained(i) == 0.0) continue;
    const Index p = model.point_of(i);
    S1(p) += w(i) * mw.dy(i) * mw.W(i, 0);
    S2(p) += w(i) * mw.dy(i) * mw.W(i, 1);
    Mv(p) += w(i) * mw.mover(i);
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(N);
  for (Index i = 0; i < N; ++i) {
    if (mw.retained(i) == 0.0 || mw.mover(i) == 0.0) continue;
    const Index p = model.point_of(i);
    if (Mv(p) <= 0.0) continue;
    const double d1 = S1(p) * mw.mover_share / Mv(p);
    const double d2 = S2(p) * mw.mover_share / Mv(p);
    const double in_group = (panel.treatment(i, mw.s) == 0 && panel.treatment(i, mw.t) == 1) ? 1.0 : 0.0;
    out(i) = (d1 - d2) * (in_group - ev.wstar(p)) / mw.mover_share;
  }
  return out;
}

double weighted_se(const PanelDataset& panel, const MomentWeights& mw, const Eigen::VectorXd& phi) {
  const auto& w = panel.weights();
  const double v = (w.array() * mw.retained.array() * phi.array().square()).sum() / mw.n_retained;
  return std::sqrt(v / mw.n_retained);
}

MateEstimate finish(const PanelDataset& panel, const PropensityModel& model, const Request& rq, const MateOptions& opt,
                    Estimand estimand) {
  Evaluation ev = evaluate(panel, model, rq);
  MateEstimate est;
  est.target = ev.chain.nodes.back();
  est.estimand = estimand;
  est.s = rq.s;
  est.t = rq.t;
  est.method = rq.method;
  est.chain = ev.chain;
  for (const auto& m : ev.mw.specs) est.moments.push_back(m.label());
  est.point = ev.point;
  est.n_retained = ev.mw.n_retained;
  est.mover_share = ev.mw.mover_share;
  est.assume_impersistence = opt.assume_impersistence;
  est.corollary_weights = ev.wstar;
  const auto& w = panel.weights();
  for (Index i = 0; i < panel.n_units(); ++i)
    if (ev.mw.retained(i) != 0.0 && ev.combined(i) != 0.0) est.n_effective += w(i);
  for (auto p : ev.mw.excluded_points) {
    est.excluded_points.push_back(model.points()[static_cast<std::size_t>(p)].label);
    est.excluded_weight += model.points()[static_cast<std::size_t>(p)].weight;
  }

  SeMethod method = opt.se.method;
  if (method == SeMethod::influence_auto)
    method = model.kind() == PropensityKind::cell_means ? SeMethod::influence_adjusted : SeMethod::influence_known;
  est.se_method = method;
  switch (method) {
    case SeMethod::none:
      est.se = std::numeric_limits<double>::quiet_NaN();
      break;
    case SeMethod::influence_known:
      est.se = weighted_se(panel, ev.mw, influence_known(panel, ev.mw, ev.combined, ev.point));
      break;
    case SeMethod::influence_adjusted: {
      Eigen::VectorXd phi = influence_adjusted(panel, model, ev.mw, ev.combined, ev.point);
      if (rq.method == MateMethod::prop3_corollary) phi += corollary_wstar_term(panel, model, ev);
      est.se = weighted_se(panel, ev.mw, phi);
      break;
    }
    case SeMethod::bootstrap: {
      const int B = opt.se.replicates;
      if (B < 2) throw Error(Errc::BadConfig, "bootstrap needs at least 2 replicates");
      std::vector<double> draws(static_cast<std::size_t>(B), std::numeric_limits<double>::quiet_NaN());
      Request frozen = rq;
      frozen.weights = ev.chain.weights;
      if (rq.method == MateMethod::prop3_corollary) frozen.weights.clear();
      parallel_for(B, opt.se.threads, [&](std::int64_t b) {
        try {
          const auto bw = bootstrap_weights(panel, substream_seed(opt.se.seed, static_cast<std::uint64_t>(b)));
          const auto rep = panel.with_weights(bw);
          const auto rep_model = model.refit(rep);
          draws[static_cast<std::size_t>(b)] = evaluate(rep, rep_model, frozen).point;
        } catch (const Error&) {
          // replicate without a feasible design; tallied below
        }
      });
      double sum = 0.0, sq = 0.0;
      for (double d : draws) {
        if (!std::isfinite(d)) {
          ++est.bootstrap_failed;
          continue;
        }
        ++est.bootstrap_ok;
        sum += d;
      }
      if (est.bootstrap_ok >= 2) {
        const double mean = sum / est.bootstrap_ok;
        for (double d : draws)
          if (std::isfinite(d)) sq += (d - mean) * (d - mean);
        est.se = std::sqrt(sq / (est.bootstrap_ok - 1));
      } else {
        est.se = std::numeric_limits<double>::quiet_NaN();
      }
      break;
    }
    case SeMethod::influence_auto:
      break;
  }
  return est;
}

void require_impersistence(int s, int t, const MateOptions& opt) {
  if (t < s && !opt.assume_impersistence)
    throw Error(Errc::AssumptionRequired,
                "identifying the period-" + std::to_string(t) + " effect from period " + std::to_string(s) +
                    " needs outcome impersistence; pass --assume-impersistence to accept it");
}

std::vector<double> link_weights(const Chain& chain, const MateOptions& opt) {
  if (opt.link_weights) return *opt.link_weights;
  return chain.mode == ChainMode::prop3 ? chain.weights : std::vector<double>{};
}

}  // namespace

MateEstimate estimate_mate_prop3(const PanelDataset& panel, const PropensityModel& model, const Chain& chain, int t,
                                 const MateOptions& options) {
  if (panel.n_periods() != 2)
    throw Error(Errc::Precondition, "estimate_mate_prop3 needs T = 2; use the multi-period estimator");
  if (t != 0 && t != 1) throw Error(Errc::BadPeriodPair, "t must be 0 or 1");
  require_impersistence(1 - t, t, options);
  Request rq{MateMethod::prop3, chain.nodes, link_weights(chain, options), 1 - t, t};
  return finish(panel, model, rq, options, Estimand::period);
}

MateEstimate estimate_mate_corollary(const PanelDataset& panel, const PropensityModel& model, int t,
                                     const MateOptions& options) {
  if (panel.n_treatments() != 2) throw Error(Errc::NotBinary, "the corollary estimator needs J = 2");
  if (panel.n_periods() != 2) throw Error(Errc::Precondition, "the corollary estimator needs T = 2");
  if (t != 0 && t != 1) throw Error(Errc::BadPeriodPair, "t must be 0 or 1");
  require_impersistence(1 - t, t, options);
  Request rq{MateMethod::prop3_corollary, {0, 1}, {}, 1 - t, t};
  return finish(panel, model, rq, options, Estimand::period);
}

MateEstimate estimate_mate_prop4(const PanelDataset& panel, const PropensityModel& model, const Chain& chain,
                                 const MateOptions& options) {
  if (panel.n_periods() != 2)
    throw Error(Errc::Precondition, "estimate_mate_prop4 needs T = 2; use the multi-period estimator");
  Request rq{MateMethod::prop4, chain.nodes, {}, 0, 1};
  return finish(panel, model, rq, options, Estimand::average);
}

MateEstimate estimate_mate_multiperiod(const PanelDataset& panel, const PropensityModel& model, const Chain& chain,
                                       int s, int t, MateMethod mode, const MateOptions& options) {
  const int T = panel.n_periods();
  if (s == t || s < 0 || t < 0 || s >= T || t >= T)
    throw Error(Errc::BadPeriodPair, "invalid period pair (" + std::to_string(s) + "," + std::to_string(t) + ")");
  if (mode == MateMethod::prop3prime || mode == MateMethod::prop3) {
    require_impersistence(s, t, options);
    Request rq{MateMethod::prop3prime, chain.nodes, link_weights(chain, options), s, t};
    return finish(panel, model, rq, options, Estimand::period);
  }
  if (mode == MateMethod::prop4prime || mode == MateMethod::prop4) {
    Request rq{MateMethod::prop4prime, chain.nodes, {}, std::min(s, t), std::max(s, t)};
    return finish(panel, model, rq, options, Estimand::average);
  }
  throw Error(Errc::Precondition, "multi-period estimation supports prop3prime and prop4prime");
}

}  // namespace matekit
