#include "matekit/gmm.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <sstream>

#include "matekit/error.hpp"
#include "matekit/linalg.hpp"
#include "matekit/parallel.hpp"

namespace matekit {

double chi2_upper_tail(double x, double dof) {
  if (dof <= 0.0) return 1.0;
  if (!(x > 0.0)) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(dof), x));
}

double normal_two_sided(double z) {
  if (!std::isfinite(z)) return 0.0;
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal_distribution<double>(), std::abs(z)));
}

std::string to_string(OmegaMethod m) {
  switch (m) {
    case OmegaMethod::influence_known:
      return "influence_known";
    case OmegaMethod::influence_adjusted:
      return "influence_adjusted";
    case OmegaMethod::influence_auto:
      return "influence";
    case OmegaMethod::bootstrap:
      return "bootstrap";
  }
  return "unknown";
}

OmegaMethod omega_method_from_string(const std::string& s) {
  if (s == "influence_known" || s == "known") return OmegaMethod::influence_known;
  if (s == "influence_adjusted" || s == "adjusted") return OmegaMethod::influence_adjusted;
  if (s == "influence" || s == "auto") return OmegaMethod::influence_auto;
  if (s == "bootstrap") return OmegaMethod::bootstrap;
  throw Error(Errc::BadConfig, "unknown omega method '" + s + "'");
}

namespace {

MomentSpec moment_for(const Chain& chain, std::size_t m, LinkMode dir, ChainMode mode) {
  const int a = chain.nodes[m], b = chain.nodes[m + 1];
  if (mode == ChainMode::prop4) return {MomentSpec::Kind::kappa, a, b};
  if (dir == LinkMode::forward) return {MomentSpec::Kind::rho, a, b};
  return {MomentSpec::Kind::neg_rho, b, a};
}

struct Layout {
  std::vector<MomentSpec> specs;
  Eigen::MatrixXd S;
};

Layout layout_for(const std::vector<Chain>& chains, const std::vector<Route>& routes, ChainMode mode) {
  Layout lay;
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& r : routes) {
    const auto& ch = chains[r.chain];
    std::vector<std::size_t> cols;
    for (std::size_t m = 0; m < ch.n_links(); ++m) {
      const auto spec = moment_for(ch, m, r.directions[m], mode);
      auto it = std::find(lay.specs.begin(), lay.specs.end(), spec);
      if (it == lay.specs.end()) {
        lay.specs.push_back(spec);
        cols.push_back(lay.specs.size() - 1);
      } else {
        cols.push_back(static_cast<std::size_t>(it - lay.specs.begin()));
      }
    }
    rows.push_back(cols);
  }
  lay.S = Eigen::MatrixXd::Zero(static_cast<Index>(routes.size()), static_cast<Index>(lay.specs.size()));
  for (std::size_t p = 0; p < rows.size(); ++p)
    for (auto k : rows[p]) lay.S(static_cast<Index>(p), static_cast<Index>(k)) = 1.0;
  return lay;
}

}  // namespace

MomentSystem build_moment_system(const PanelDataset& panel, const PropensityModel& model,
                                 const std::vector<Chain>& chains, int target, const MomentSystemOptions& options) {
  if (chains.empty()) throw Error(Errc::NoFeasibleChain, "no chain to build moments from");
  MomentSystem sys;
  sys.target = target;
  sys.mode = options.mode;
  sys.s = options.s;
  sys.t = options.t;
  sys.chains = chains;
  std::stable_sort(sys.chains.begin(), sys.chains.end(),
                   [](const Chain& a, const Chain& b) { return a.nodes.size() < b.nodes.size(); });
  for (const auto& ch : sys.chains)
    if (ch.nodes.empty() || ch.nodes.front() != 0 || ch.nodes.back() != target)
      throw Error(Errc::InfeasibleChain, "chain " + ch.to_string() + " does not run from 0 to " + std::to_string(target));

  // Routes: one per (chain, direction choice per link); forward before reverse.
  std::size_t total = 0;
  for (const auto& ch : sys.chains) {
    std::size_t n = 1;
    if (options.mode == ChainMode::prop3)
      for (auto m : ch.modes)
        if (m == LinkMode::both) n = n > SIZE_MAX / 2 ? SIZE_MAX : n * 2;
    total = total > SIZE_MAX - n ? SIZE_MAX : total + n;
  }
  sys.routes_total = total;
  if (total > options.route_cap && !options.truncate_routes)
    throw Error(Errc::RouteExplosion, std::to_string(total) + " routes exceed the cap of " +
                                          std::to_string(options.route_cap) + "; raise the cap or restrict chains");
  for (std::size_t c = 0; c < sys.chains.size() && sys.routes.size() < options.route_cap; ++c) {
    const auto& ch = sys.chains[c];
    std::vector<std::vector<LinkMode>> choices;
    for (auto m : ch.modes) {
      if (options.mode == ChainMode::prop4)
        choices.push_back({LinkMode::both});
      else if (m == LinkMode::both)
        choices.push_back({LinkMode::forward, LinkMode::reverse});
      else
        choices.push_back({m});
    }
    std::vector<std::size_t> idx(choices.size(), 0);
    while (sys.routes.size() < options.route_cap) {
      Route r;
      r.chain = c;
      std::ostringstream os;
      os << ch.to_string();
      for (std::size_t m = 0; m < choices.size(); ++m) {
        r.directions.push_back(choices[m][idx[m]]);
        if (options.mode == ChainMode::prop3) os << (m ? "" : ":") << (choices[m][idx[m]] == LinkMode::forward ? 'f' : 'r');
      }
      r.label = os.str();
      sys.routes.push_back(std::move(r));
      // odometer over the per-link choices, last link fastest
      bool done = true;
      for (std::size_t m = choices.size(); m-- > 0;) {
        if (++idx[m] < choices[m].size()) {
          done = false;
          break;
        }
        idx[m] = 0;
      }
      if (done) break;
    }
  }
  sys.routes_truncated = sys.routes.size() < total;

  auto lay = layout_for(sys.chains, sys.routes, options.mode);
  sys.specs = lay.specs;
  sys.S = lay.S;
  for (const auto& sp : sys.specs) sys.labels.push_back(sp.label());

  const auto excluded = screen_points(model, options.s, options.t, sys.specs);
  for (auto p : excluded) sys.excluded_points.push_back(model.points()[static_cast<std::size_t>(p)].label);
  const auto mw = moment_weights(panel, model, options.s, options.t, sys.specs, excluded);
  const Index N = panel.n_units();
  const Index K = static_cast<Index>(sys.specs.size());
  const auto& w = panel.weights();
  sys.n = mw.n_retained;
  sys.M.resize(K);
  const Eigen::VectorXd base = (w.array() * mw.retained.array() * mw.dy.array()).matrix();
  for (Index k = 0; k < K; ++k) sys.M(k) = base.dot(mw.W.col(k)) / mw.n_retained;

  OmegaMethod om = options.omega;
  if (om == OmegaMethod::influence_auto)
    om = model.kind() == PropensityKind::cell_means ? OmegaMethod::influence_adjusted : OmegaMethod::influence_known;
  sys.omega_method = to_string(om);
  if (om == OmegaMethod::bootstrap) {
    const int B = options.bootstrap_replicates;
    if (B < 2) throw Error(Errc::BadConfig, "bootstrap needs at least 2 replicates");
    Eigen::MatrixXd draws = Eigen::MatrixXd::Constant(B, K, std::numeric_limits<double>::quiet_NaN());
    parallel_for(B, options.threads, [&](std::int64_t b) {
      try {
        const auto rep = panel.with_weights(bootstrap_weights(panel, substream_seed(options.seed, static_cast<std::uint64_t>(b))));
        const auto rep_model = model.refit(rep);
        const auto rep_ex = screen_points(rep_model, options.s, options.t, sys.specs);
        const auto rmw = moment_weights(rep, rep_model, options.s, options.t, sys.specs, rep_ex);
        const Eigen::VectorXd rb = (rep.weights().array() * rmw.retained.array() * rmw.dy.array()).matrix();
        for (Index k = 0; k < K; ++k) draws(b, k) = rb.dot(rmw.W.col(k)) / rmw.n_retained;
      } catch (const Error&) {
        // infeasible replicate: left as NaN and dropped
      }
    });
    std::vector<Index> ok;
    for (Index b = 0; b < B; ++b)
      if (draws.row(b).allFinite()) ok.push_back(b);
    if (ok.size() < 2) throw Error(Errc::SingularSystem, "fewer than two bootstrap replicates succeeded");
    Eigen::MatrixXd D(static_cast<Index>(ok.size()), K);
    for (std::size_t r = 0; r < ok.size(); ++r) D.row(static_cast<Index>(r)) = draws.row(ok[r]);
    const Eigen::RowVectorXd mean = D.colwise().mean();
    D.rowwise() -= mean;
    sys.Omega = (D.transpose() * D) / static_cast<double>(ok.size() - 1) * sys.n;
  } else {
    sys.influence.resize(N, K);
    for (Index k = 0; k < K; ++k) {
      const Eigen::VectorXd col = mw.W.col(k);
      sys.influence.col(k) = om == OmegaMethod::influence_known ? influence_known(panel, mw, col, sys.M(k))
                                                                : influence_adjusted(panel, model, mw, col, sys.M(k));
    }
    sys.Omega = weighted_second_moment(sys.influence, (w.array() * mw.retained.array()).matrix());
  }
  return sys;
}

EfficientEstimate efficient_estimate(const MomentSystem& sys) {
  const Index P = sys.S.rows();
  if (P == 0) throw Error(Errc::SingularSystem, "moment system has no routes");
  EfficientEstimate out;
  const Eigen::MatrixXd V = sys.S * sys.Omega * sys.S.transpose();
  const auto inv = symmetric_inverse(V);
  out.condition = inv.condition;
  if (inv.rank == 0) throw Error(Errc::SingularSystem, "S Omega S' has rank 0");
  if (inv.truncated) {
    std::ostringstream os;
    os << "spectral truncation: condition " << inv.condition << ", rank " << inv.rank << " of " << P;
    out.fallbacks.push_back(os.str());
  }
  const Eigen::VectorXd iota = Eigen::VectorXd::Ones(P);
  const Eigen::VectorXd Vi = inv.inverse * iota;
  const double denom = iota.dot(Vi);
  if (!(denom > 0.0)) throw Error(Errc::SingularSystem, "iota' V^-1 iota is not positive");
  out.route_estimates = sys.route_estimates();
  out.route_weights = Vi / denom;
  out.moment_weights = sys.S.transpose() * out.route_weights;
  out.beta_star = out.route_weights.dot(out.route_estimates);
  out.se = std::sqrt(1.0 / denom / sys.n);
  const Eigen::VectorXd gap = out.beta_star * iota - out.route_estimates;
  out.T_stat = std::max(0.0, sys.n * gap.dot(inv.inverse * gap));
  out.dof = static_cast<int>(inv.rank) - 1;
  if (out.dof <= 0) {
    out.T_stat = P == 1 ? 0.0 : out.T_stat;
    out.p_value = 1.0;
  } else {
    out.p_value = chi2_upper_tail(out.T_stat, out.dof);
  }
  return out;
}

nlohmann::json EfficientEstimate::to_json(const MomentSystem& sys) const {
  nlohmann::json j;
  j["beta_star"] = beta_star;
  j["se"] = se;
  std::vector<nlohmann::json> routes;
  for (std::size_t p = 0; p < sys.routes.size(); ++p)
    routes.push_back({{"route", sys.routes[p].label},
                      {"estimate", route_estimates(static_cast<Index>(p))},
                      {"weight", route_weights(static_cast<Index>(p))}});
  j["routes"] = routes;
  j["route_weights"] = std::vector<double>(route_weights.data(), route_weights.data() + route_weights.size());
  std::vector<nlohmann::json> moments;
  for (std::size_t k = 0; k < sys.labels.size(); ++k)
    moments.push_back({{"moment", sys.labels[k]}, {"estimate", sys.M(static_cast<Index>(k))},
                       {"weight", moment_weights(static_cast<Index>(k))}});
  j["moments"] = moments;
  j["T"] = T_stat;
  j["dof"] = dof;
  j["p"] = p_value;
  j["condition"] = condition;
  j["fallbacks"] = fallbacks;
  j["omega_method"] = sys.omega_method;
  j["n"] = sys.n;
  j["routes_total"] = sys.routes_total;
  j["routes_truncated"] = sys.routes_truncated;
  j["excluded_points"] = sys.excluded_points;
  return j;
}

PairwiseTest specification_test_pairwise(const MomentSystem& sys, std::size_t p1, std::size_t p2) {
  const auto P = static_cast<std::size_t>(sys.S.rows());
  if (P < 2) throw Error(Errc::Precondition, "a pairwise test needs at least two routes");
  if (p1 >= P || p2 >= P) throw Error(Errc::Precondition, "route index out of range");
  const Eigen::RowVectorXd r = sys.S.row(static_cast<Index>(p1)) - sys.S.row(static_cast<Index>(p2));
  if (p1 == p2 || r.isZero(0.0))
    throw Error(Errc::SameRoute, "routes " + std::to_string(p1) + " and " + std::to_string(p2) + " are the same route");
  PairwiseTest out;
  out.p1 = p1;
  out.p2 = p2;
  out.difference = r.dot(sys.M);
  const double var = r * sys.Omega * r.transpose();
  out.se = std::sqrt(std::max(0.0, var) / sys.n);
  if (out.se > 0.0)
    out.p_value = normal_two_sided(out.difference / out.se);
  else
    out.p_value = out.difference == 0.0 ? 1.0 : 0.0;
  return out;
}

}  // namespace matekit
