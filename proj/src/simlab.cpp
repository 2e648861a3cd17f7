#include "matekit/simlab.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <random>
#include <set>

#include "matekit/chains.hpp"
#include "matekit/error.hpp"
#include "matekit/moverreg.hpp"
#include "matekit/parallel.hpp"

namespace matekit {

namespace {

using nlohmann::json;

const boost::math::normal_distribution<double> kStdNormal;

double normal_pdf(double z) { return std::isfinite(z) ? boost::math::pdf(kStdNormal, z) : 0.0; }

double normal_quantile(double u) {
  if (u <= 0.0) return -std::numeric_limits<double>::infinity();
  if (u >= 1.0) return std::numeric_limits<double>::infinity();
  return boost::math::quantile(kStdNormal, u);
}

[[noreturn]] void invalid(const std::string& msg) { throw Error(Errc::InvalidSpec, msg); }

bool is_mover_path(const std::vector<int>& p) {
  return std::any_of(p.begin(), p.end(), [&](int j) { return j != p.front(); });
}

std::string path_string(const std::vector<int>& p) {
  std::string s;
  for (std::size_t k = 0; k < p.size(); ++k) s += (k ? "->" : "") + std::to_string(p[k]);
  return s;
}

std::size_t x_index(const DgpSpec& spec, const json& v, const std::string& where) {
  const double x = v.get<double>();
  for (std::size_t i = 0; i < spec.covariates.size(); ++i)
    if (std::abs(spec.covariates[i].x - x) < 1e-12) return i;
  invalid(where + ": x = " + std::to_string(x) + " is not in the covariate support");
}

std::vector<int> read_path(const DgpSpec& spec, const json& v, const std::string& where) {
  auto p = v.get<std::vector<int>>();
  if (static_cast<int>(p.size()) != spec.T) invalid(where + ": path length must equal T");
  for (int j : p)
    if (j < 0 || j >= spec.J) invalid(where + ": treatment " + std::to_string(j) + " out of range");
  return p;
}

std::vector<double> beta_cell(const json& v, std::size_t nx) {
  if (v.is_number()) return std::vector<double>(nx, v.get<double>());
  auto out = v.get<std::vector<double>>();
  if (out.size() != nx) invalid("beta: per-x list must have one value per covariate point");
  return out;
}

}  // namespace

DgpSpec DgpSpec::from_json(const json& j) {
  DgpSpec spec;
  try {
    spec.J = j.at("J").get<int>();
    spec.T = j.at("T").get<int>();
    if (spec.J < 2) invalid("J must be at least 2");
    if (spec.T < 2) invalid("T must be at least 2");

    if (j.contains("covariates")) {
      for (const auto& c : j.at("covariates")) spec.covariates.push_back({c.at("x").get<double>(), c.at("prob").get<double>()});
    } else {
      spec.covariates.push_back({0.0, 1.0});
    }
    if (spec.covariates.empty()) invalid("covariate support is empty");
    double total = 0.0;
    std::set<double> seen;
    for (const auto& c : spec.covariates) {
      if (!(c.prob >= 0.0) || !std::isfinite(c.x)) invalid("covariate probabilities must be nonnegative");
      if (!seen.insert(c.x).second) invalid("covariate support has duplicate values");
      total += c.prob;
    }
    if (std::abs(total - 1.0) > 1e-9) invalid("covariate probabilities sum to " + std::to_string(total));

    if (j.contains("alpha")) {
      const auto& a = j.at("alpha");
      const auto fam = a.value("family", std::string("normal"));
      if (fam == "normal")
        spec.alpha.family = Alpha::Family::normal;
      else if (fam == "two-point" || fam == "two_point")
        spec.alpha.family = Alpha::Family::two_point;
      else
        invalid("unknown alpha family '" + fam + "'");
      spec.alpha.mean = a.value("mean", 0.0);
      spec.alpha.sd = a.value("sd", 1.0);
      spec.alpha.bins = a.value("bins", spec.alpha.family == Alpha::Family::two_point ? 2 : 4);
      if (spec.alpha.family == Alpha::Family::two_point) spec.alpha.bins = 2;
      if (spec.alpha.bins < 0 || !(spec.alpha.sd >= 0.0)) invalid("alpha needs sd >= 0 and bins >= 0");
    }

    const std::size_t nx = spec.covariates.size();
    const auto& b = j.at("beta");
    if (!b.is_array() || static_cast<int>(b.size()) != spec.J) invalid("beta needs one row per treatment");
    for (const auto& row : b) {
      if (!row.is_array() || static_cast<int>(row.size()) != spec.T) invalid("beta rows need one entry per period");
      std::vector<std::vector<double>> r;
      for (const auto& cell : row) {
        r.push_back(beta_cell(cell, nx));
        for (double v : r.back())
          if (!std::isfinite(v)) invalid("beta must be finite");
      }
      spec.beta.push_back(std::move(r));
    }

    std::vector<Shift> shifts;
    if (j.contains("epsilon")) {
      const auto& e = j.at("epsilon");
      if (e.is_number()) {
        spec.epsilon_sd = e.get<double>();
      } else {
        spec.epsilon_sd = e.value("sd", 1.0);
        if (e.contains("shifts"))
          for (const auto& s : e.at("shifts")) {
            Shift sh;
            sh.path = read_path(spec, s.at("path"), "epsilon shift");
            sh.t = s.at("t").get<int>();
            if (s.contains("x")) sh.x = x_index(spec, s.at("x"), "epsilon shift");
            sh.value = s.at("value").get<double>();
            shifts.push_back(sh);
          }
      }
      if (!(spec.epsilon_sd >= 0.0)) invalid("epsilon sd must be nonnegative");
    }
    if (j.contains("effect_shifts"))
      for (const auto& s : j.at("effect_shifts")) {
        Shift sh;
        sh.path = read_path(spec, s.at("path"), "effect shift");
        sh.t = s.at("t").get<int>();
        sh.j = s.at("j").get<int>();
        if (*sh.j < 0 || *sh.j >= spec.J) invalid("effect shift: treatment out of range");
        if (s.contains("x")) sh.x = x_index(spec, s.at("x"), "effect shift");
        sh.value = s.at("value").get<double>();
        shifts.push_back(sh);
      }
    for (const auto& sh : shifts) {
      if (sh.t < 0 || sh.t >= spec.T) invalid("shift period out of range");
      if (!std::isfinite(sh.value)) invalid("shift value must be finite");
    }
    spec.shifts = std::move(shifts);

    for (const auto& e : j.at("transition_law")) {
      Transition tr;
      if (e.contains("x"))
        tr.x = x_index(spec, e.at("x"), "transition_law");
      else if (nx != 1)
        invalid("transition_law entries need x when the covariate has several points");
      if (e.contains("bin")) {
        tr.bin = e.at("bin").get<int>();
        if (spec.n_bins() == 0) invalid("transition_law uses alpha bins but alpha is continuous");
        if (*tr.bin < 0 || *tr.bin >= spec.n_bins()) invalid("transition_law bin out of range");
      }
      tr.path = read_path(spec, e.at("path"), "transition_law");
      tr.prob = e.at("prob").get<double>();
      if (!(tr.prob >= 0.0) || tr.prob > 1.0) invalid("transition probabilities must lie in [0, 1]");
      spec.transitions.push_back(tr);
    }
    const int nb = std::max(1, spec.n_bins());
    for (std::size_t x = 0; x < nx; ++x)
      for (int bin = 0; bin < nb; ++bin) {
        double sum = 0.0;
        for (const auto* tr : spec.law(x, bin)) sum += tr->prob;
        if (std::abs(sum - 1.0) > 1e-9)
          invalid("transition probabilities for x = " + std::to_string(spec.covariates[x].x) + ", bin " +
                  std::to_string(bin) + " sum to " + std::to_string(sum));
      }

    if (j.contains("persistence"))
      for (const auto& p : j.at("persistence")) {
        Persistence pe;
        pe.k = p.at("k").get<int>();
        pe.j = p.at("j").get<int>();
        if (pe.k < 0 || pe.k >= spec.J || pe.j < 0 || pe.j >= spec.J) invalid("persistence: treatment out of range");
        if (p.contains("x")) pe.x = x_index(spec, p.at("x"), "persistence");
        pe.value = p.at("value").get<double>();
        if (!std::isfinite(pe.value)) invalid("persistence must be finite");
        spec.persistence.push_back(pe);
      }
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    invalid(std::string("malformed DGP spec: ") + e.what());
  }
  return spec;
}

json DgpSpec::to_json() const {
  json j;
  j["J"] = J;
  j["T"] = T;
  for (const auto& c : covariates) j["covariates"].push_back({{"x", c.x}, {"prob", c.prob}});
  j["alpha"] = {{"family", alpha.family == Alpha::Family::normal ? "normal" : "two_point"},
                {"mean", alpha.mean},
                {"sd", alpha.sd},
                {"bins", alpha.bins}};
  j["beta"] = beta;
  json eps = {{"sd", epsilon_sd}, {"shifts", json::array()}};
  json eff = json::array();
  for (const auto& s : shifts) {
    json e = {{"path", s.path}, {"t", s.t}, {"value", s.value}};
    if (s.x) e["x"] = covariates[*s.x].x;
    if (s.j) {
      e["j"] = *s.j;
      eff.push_back(e);
    } else {
      eps["shifts"].push_back(e);
    }
  }
  j["epsilon"] = eps;
  j["effect_shifts"] = eff;
  for (const auto& tr : transitions) {
    json e = {{"x", covariates[tr.x].x}, {"path", tr.path}, {"prob", tr.prob}};
    if (tr.bin) e["bin"] = *tr.bin;
    j["transition_law"].push_back(e);
  }
  j["persistence"] = json::array();
  for (const auto& p : persistence) {
    json e = {{"k", p.k}, {"j", p.j}, {"value", p.value}};
    if (p.x) e["x"] = covariates[*p.x].x;
    j["persistence"].push_back(e);
  }
  j["seed"] = seed;
  return j;
}

int DgpSpec::n_bins() const { return alpha.family == Alpha::Family::two_point ? 2 : alpha.bins; }

double DgpSpec::bin_prob(int bin) const {
  (void)bin;
  return 1.0 / std::max(1, n_bins());
}

double DgpSpec::bin_mean(int bin) const {
  if (alpha.family == Alpha::Family::two_point) return bin == 0 ? alpha.mean - alpha.sd : alpha.mean + alpha.sd;
  const int B = n_bins();
  if (B == 0) throw Error(Errc::InfiniteSupport, "alpha is continuous; set alpha.bins to discretize it");
  const double a = normal_quantile(static_cast<double>(bin) / B);
  const double b = normal_quantile(static_cast<double>(bin + 1) / B);
  return alpha.mean + alpha.sd * (normal_pdf(a) - normal_pdf(b)) * B;
}

double DgpSpec::delta(int k, int j, std::size_t x) const {
  double v = 0.0;
  for (const auto& p : persistence)
    if (p.k == k && p.j == j && (!p.x || *p.x == x)) v += p.value;
  return v;
}

double DgpSpec::trend_shift(const std::vector<int>& path, int t, std::size_t x) const {
  double v = 0.0;
  for (const auto& s : shifts)
    if (!s.j && s.t == t && s.path == path && (!s.x || *s.x == x)) v += s.value;
  return v;
}

double DgpSpec::effect_shift(const std::vector<int>& path, int j, int t, std::size_t x) const {
  double v = 0.0;
  for (const auto& s : shifts)
    if (s.j && *s.j == j && s.t == t && s.path == path && (!s.x || *s.x == x)) v += s.value;
  return v;
}

double DgpSpec::potential(std::size_t x, double alpha_value, const std::vector<int>& path, int t, int prev,
                          int j) const {
  double y = alpha_value + beta[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)][x];
  if (t >= 1) y += delta(prev, j, x);
  return y + trend_shift(path, t, x) + effect_shift(path, j, t, x);
}

std::vector<const DgpSpec::Transition*> DgpSpec::law(std::size_t x, int bin) const {
  std::vector<const Transition*> out;
  for (const auto& tr : transitions)
    if (tr.x == x && (!tr.bin || *tr.bin == bin)) out.push_back(&tr);
  return out;
}

std::map<std::string, bool> DgpSpec::assumptions() const {
  std::map<std::string, bool> a;
  const auto nx = covariates.size();
  bool eps_shift = false, eff_shift = false;
  for (const auto& s : shifts) (s.j ? eff_shift : eps_shift) = true;
  bool io = true, coi = true, ceh = !eff_shift;
  for (std::size_t x = 0; x < nx; ++x)
    for (int k = 0; k < J; ++k)
      for (int j = 0; j < J; ++j) {
        if (delta(k, j, x) != 0.0) io = false;
        if (delta(k, j, x) != delta(j, j, x)) coi = false;
        if (delta(k, j, x) - delta(k, 0, x) != delta(0, j, x) - delta(0, 0, x)) ceh = false;
      }
  bool constant = io && !eff_shift;
  for (int j = 1; j < J && constant; ++j) {
    const double ref = beta[static_cast<std::size_t>(j)][0][0] - beta[0][0][0];
    for (int t = 0; t < T; ++t)
      for (std::size_t x = 0; x < nx; ++x)
        if (std::abs(beta[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)][x] -
                     beta[0][static_cast<std::size_t>(t)][x] - ref) > 1e-12)
          constant = false;
  }
  // An effect shift on a treatment the path itself visits changes that
  // treatment's no-move trend unless it is constant over time.
  bool cpt = !eps_shift;
  for (const auto& sh : shifts) {
    if (!sh.j || std::find(sh.path.begin(), sh.path.end(), *sh.j) == sh.path.end()) continue;
    for (std::size_t x = 0; x < nx && cpt; ++x) {
      if (sh.x && *sh.x != x) continue;
      for (int t = 1; t < T; ++t)
        if (effect_shift(sh.path, *sh.j, t, x) != effect_shift(sh.path, *sh.j, 0, x)) cpt = false;
    }
  }
  bool co = cpt;
  for (int t = 1; t < T && co; ++t)
    for (std::size_t x = 1; x < nx; ++x)
      if (std::abs((beta[0][static_cast<std::size_t>(t)][x] - beta[0][0][x]) -
                   (beta[0][static_cast<std::size_t>(t)][0] - beta[0][0][0])) > 1e-12)
        co = false;
  a["CPT"] = cpt;
  a["CEH"] = ceh;
  a["COI"] = coi;
  a["IO"] = io;
  a["CE"] = constant;
  a["CO"] = co;
  return a;
}

PanelDataset generate(const DgpSpec& spec, Index n, std::uint64_t seed) {
  if (n < 1) throw Error(Errc::InvalidSpec, "sample size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> eps(0.0, 1.0);
  std::vector<double> px;
  for (const auto& c : spec.covariates) px.push_back(c.prob);
  std::discrete_distribution<std::size_t> draw_x(px.begin(), px.end());
  const int B = spec.n_bins();

  const int T = spec.T;
  Eigen::MatrixXd Y(n, T);
  Eigen::MatrixXi D(n, T);
  Eigen::MatrixXd X(n, 1);
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::size_t x = draw_x(rng);
    int bin = 0;
    double alpha = 0.0;
    if (spec.alpha.family == DgpSpec::Alpha::Family::two_point) {
      bin = unif(rng) < 0.5 ? 0 : 1;
      alpha = spec.bin_mean(bin);
    } else {
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      if (B > 0) {
        bin = std::min(B - 1, static_cast<int>(u * B));
      }
      alpha = spec.alpha.mean + spec.alpha.sd * normal_quantile(u);
    }
    const auto law = spec.law(x, bin);
    std::vector<double> pp;
    for (const auto* tr : law) pp.push_back(tr->prob);
    std::discrete_distribution<std::size_t> draw_path(pp.begin(), pp.end());
    const auto& path = law[draw_path(rng)]->path;
    for (int t = 0; t < T; ++t) {
      const int j = path[static_cast<std::size_t>(t)];
      const int prev = t > 0 ? path[static_cast<std::size_t>(t - 1)] : j;
      Y(i, t) = spec.potential(x, alpha, path, t, prev, j) + spec.epsilon_sd * eps(rng);
      D(i, t) = j;
    }
    X(i, 0) = spec.covariates[x].x;
    ids.push_back("u" + std::to_string(i));
  }
  CovariateColumn col{"x", CovariateKind::discrete, {}, {}};
  for (const auto& c : spec.covariates) col.levels.push_back(c.x);
  std::sort(col.levels.begin(), col.levels.end());
  return PanelDataset::create(std::move(ids), std::move(Y), std::move(D), std::move(X), {col}, spec.J);
}

PopulationOracle population_oracle(const DgpSpec& spec) {
  if (spec.alpha.family == DgpSpec::Alpha::Family::normal && spec.alpha.bins == 0)
    throw Error(Errc::InfiniteSupport, "alpha is continuous; the oracle needs a discretized alpha (alpha.bins > 0)");
  PopulationOracle o;
  o.spec_ = spec;
  const int B = spec.n_bins();
  for (std::size_t x = 0; x < spec.covariates.size(); ++x)
    for (int bin = 0; bin < B; ++bin) {
      const double pxb = spec.covariates[x].prob * spec.bin_prob(bin);
      const double a = spec.bin_mean(bin);
      for (const auto* tr : spec.law(x, bin)) {
        const double p = pxb * tr->prob;
        if (p <= 0.0) continue;
        PopulationOracle::Cell c;
        c.x = x;
        c.bin = bin;
        c.path = tr->path;
        c.prob = p;
        c.alpha = a;
        c.mover = is_mover_path(tr->path);
        c.y.resize(spec.T);
        for (int t = 0; t < spec.T; ++t) {
          const int j = tr->path[static_cast<std::size_t>(t)];
          c.y(t) = spec.potential(x, a, tr->path, t, t > 0 ? tr->path[static_cast<std::size_t>(t - 1)] : j, j);
        }
        o.cells_.push_back(std::move(c));
      }
    }
  return o;
}

PanelDataset PopulationOracle::as_panel() const {
  const auto n = static_cast<Index>(cells_.size());
  const int T = spec_.T;
  Eigen::MatrixXd Y(n, T);
  Eigen::MatrixXi D(n, T);
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd w(n);
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    const auto& c = cells_[static_cast<std::size_t>(i)];
    Y.row(i) = c.y.transpose();
    for (int t = 0; t < T; ++t) D(i, t) = c.path[static_cast<std::size_t>(t)];
    X(i, 0) = spec_.covariates[c.x].x;
    w(i) = c.prob;
    ids.push_back("cell" + std::to_string(i));
  }
  CovariateColumn col{"x", CovariateKind::discrete, {}, {}};
  for (const auto& c : spec_.covariates)
    if (c.prob > 0.0) col.levels.push_back(c.x);
  std::sort(col.levels.begin(), col.levels.end());
  return PanelDataset::create(std::move(ids), std::move(Y), std::move(D), std::move(X), {col}, spec_.J)
      .with_weights(std::move(w));
}

double PopulationOracle::mover_share() const {
  double m = 0.0;
  for (const auto& c : cells_)
    if (c.mover) m += c.prob;
  return m;
}

double PopulationOracle::mate(int j, int t) const {
  if (j < 0 || j >= spec_.J || t < 0 || t >= spec_.T) throw Error(Errc::Precondition, "MATE index out of range");
  double num = 0.0, den = 0.0;
  for (const auto& c : cells_) {
    if (!c.mover) continue;
    const int prev = t > 0 ? c.path[static_cast<std::size_t>(t - 1)] : 0;
    num += c.prob * (spec_.potential(c.x, c.alpha, c.path, t, prev, j) - spec_.potential(c.x, c.alpha, c.path, t, prev, 0));
    den += c.prob;
  }
  if (den <= 0.0) throw Error(Errc::NoMovers, "the population has no movers");
  return num / den;
}

double PopulationOracle::path_prob(const std::vector<int>& path, std::optional<std::size_t> x) const {
  double p = 0.0;
  for (const auto& c : cells_)
    if (c.path == path && (!x || *x == c.x)) p += c.prob;
  return p;
}

double PopulationOracle::path_effect(const std::vector<int>& path, int t, int j, int k, std::optional<int> prev_j,
                                     std::optional<int> prev_k, std::optional<std::size_t> x) const {
  double num = 0.0, den = 0.0;
  for (const auto& c : cells_) {
    if (c.path != path || (x && *x != c.x)) continue;
    const int actual = t > 0 ? c.path[static_cast<std::size_t>(t - 1)] : 0;
    num += c.prob * (spec_.potential(c.x, c.alpha, c.path, t, prev_j.value_or(actual), j) -
                     spec_.potential(c.x, c.alpha, c.path, t, prev_k.value_or(actual), k));
    den += c.prob;
  }
  if (den <= 0.0) throw Error(Errc::MissingCell, "no population mass on path " + path_string(path));
  return num / den;
}

std::optional<double> PopulationOracle::constant_effect(int j) const {
  if (!spec_.assumptions().at("CE")) return std::nullopt;
  return spec_.beta[static_cast<std::size_t>(j)][0][0] - spec_.beta[0][0][0];
}

double PopulationOracle::stayer_trend_gap(int j, int k) const {
  if (spec_.T != 2) throw Error(Errc::Precondition, "stayer trend gaps are defined for T = 2");
  auto growth = [&](int a) {
    double num = 0.0, den = 0.0;
    for (const auto& c : cells_)
      if (c.path[0] == a && c.path[1] == a) {
        num += c.prob * (c.y(1) - c.y(0));
        den += c.prob;
      }
    if (den <= 0.0) throw Error(Errc::MissingCell, "no stayers at " + std::to_string(a));
    return num / den;
  };
  return growth(j) - growth(k);
}

double PopulationOracle::chain_sum_gap(int j, int k, int t, int s, int u) const {
  if (spec_.T != 2) throw Error(Errc::Precondition, "chain-sum terms are defined for T = 2");
  return path_effect({0, j}, t, j, 0) + path_effect({j, k}, s, k, j) - path_effect({0, k}, u, k, 0);
}

double PopulationOracle::coi_violation(const Chain& chain) const {
  if (spec_.T != 2) throw Error(Errc::Precondition, "the persistence term is defined for T = 2");
  const double pm = mover_share();
  if (pm <= 0.0) throw Error(Errc::NoMovers, "the population has no movers");
  double total = 0.0;
  for (std::size_t m = 0; m < chain.n_links(); ++m) {
    const int a = chain.nodes[m], b = chain.nodes[m + 1];
    const double w = chain.weights.empty() ? 0.5 : chain.weights[m];
    for (std::size_t x = 0; x < spec_.covariates.size(); ++x) {
      double mover_x = 0.0;
      for (const auto& c : cells_)
        if (c.x == x && c.mover) mover_x += c.prob;
      if (mover_x <= 0.0) continue;
      const double share = mover_x / pm;
      // forward link: movers b->a carry their period-1 persistence
      if (w != 0.0 && path_prob({b, a}, x) > 0.0) total -= share * w * path_effect({b, a}, 1, a, a, b, a, x);
      if (w != 1.0 && path_prob({a, b}, x) > 0.0)
        total += share * (1.0 - w) * path_effect({a, b}, 1, b, b, a, b, x);
    }
  }
  return total;
}

json PopulationOracle::to_json() const {
  json j;
  j["n_cells"] = cells_.size();
  j["mover_share"] = mover_share();
  j["assumptions"] = spec_.assumptions();
  json mates = json::object(), avg = json::object(), ce = json::object();
  if (mover_share() > 0.0) {
    for (int a = 1; a < spec_.J; ++a) {
      for (int t = 0; t < spec_.T; ++t) mates["MATE[" + std::to_string(a) + "," + std::to_string(t) + "]"] = mate(a, t);
      for (int s = 0; s < spec_.T; ++s)
        for (int t = s + 1; t < spec_.T; ++t)
          avg["avg(MATE[" + std::to_string(a) + "," + std::to_string(s) + "],MATE[" + std::to_string(a) + "," +
              std::to_string(t) + "])"] = mate_average(a, s, t);
      if (auto c = constant_effect(a)) ce[std::to_string(a)] = *c;
    }
  }
  j["mate"] = mates;
  j["mate_average"] = avg;
  j["constant_effects"] = ce;
  if (spec_.T == 2) {
    json pe = json::array();
    std::set<std::vector<int>> paths;
    for (const auto& c : cells_)
      if (c.mover) paths.insert(c.path);
    for (const auto& p : paths)
      for (int t = 0; t < 2; ++t)
        pe.push_back({{"path", p}, {"t", t}, {"effect", path_effect(p, t, p[1], p[0])}, {"prob", path_prob(p)}});
    j["pairwise_effects"] = pe;
  }
  return j;
}

EstimatorConfig EstimatorConfig::from_json(const json& j) {
  EstimatorConfig c;
  c.mate.se.method = SeMethod::influence_auto;
  try {
    const auto m = j.value("method", std::string("prop3"));
    if (m == "mover_regression")
      c.method = Method::mover_regression;
    else if (m == "prop3")
      c.method = Method::prop3;
    else if (m == "corollary" || m == "prop3_corollary")
      c.method = Method::prop3_corollary;
    else if (m == "prop4")
      c.method = Method::prop4;
    else if (m == "prop3prime" || m == "prop4prime") {
      c.method = Method::multiperiod;
      c.multiperiod_mode = m == "prop3prime" ? MateMethod::prop3prime : MateMethod::prop4prime;
    } else if (m == "gmm")
      c.method = Method::gmm;
    else
      throw Error(Errc::BadConfig, "unknown estimator '" + m + "'");
    c.target = j.value("target", 1);
    c.t = j.value("t", 1);
    c.s = j.value("s", c.method == Method::gmm ? 1 - c.t : 0);
    if (j.contains("chain")) c.chain = j.at("chain").get<std::vector<int>>();
    if (j.contains("propensity")) c.propensity = PropensityConfig::from_json(j.at("propensity"));
    if (j.contains("se")) {
      const auto& s = j.at("se");
      if (s.is_string()) {
        c.mate.se.method = se_method_from_string(s.get<std::string>());
      } else {
        if (s.contains("method")) c.mate.se.method = se_method_from_string(s.at("method").get<std::string>());
        c.mate.se.replicates = s.value("replicates", c.mate.se.replicates);
        c.mate.se.seed = s.value("seed", c.mate.se.seed);
      }
    }
    c.mate.assume_impersistence = j.value("assume_impersistence", false);
    if (j.contains("link_weights")) c.mate.link_weights = j.at("link_weights").get<std::vector<double>>();
    if (j.contains("gmm")) {
      const auto& g = j.at("gmm");
      const auto mode = g.value("mode", std::string("prop3"));
      if (mode != "prop3" && mode != "prop4") throw Error(Errc::BadConfig, "gmm mode must be prop3 or prop4");
      c.gmm_mode = mode == "prop4" ? ChainMode::prop4 : ChainMode::prop3;
      c.gmm.route_cap = g.value("route_cap", c.gmm.route_cap);
      c.gmm.truncate_routes = g.value("truncate_routes", false);
      if (g.contains("omega")) c.gmm.omega = omega_method_from_string(g.at("omega").get<std::string>());
      c.gmm.bootstrap_replicates = g.value("bootstrap_replicates", c.gmm.bootstrap_replicates);
    }
    c.level = j.value("level", 0.95);
    if (!(c.level > 0.0 && c.level < 1.0)) throw Error(Errc::BadConfig, "level must lie in (0, 1)");
  } catch (const json::exception& e) {
    throw Error(Errc::BadConfig, std::string("malformed estimator config: ") + e.what());
  }
  return c;
}

namespace {

Chain pick_chain(const SupportGraph& g, const EstimatorConfig& c, ChainMode mode) {
  if (!c.chain.empty()) return make_chain(g, c.chain, mode);
  return enumerate_chains(g, c.target, mode).front();
}

}  // namespace

ReplicationResult run_estimator(const PanelDataset& panel, const EstimatorConfig& c) {
  ReplicationResult r;
  using M = EstimatorConfig::Method;
  if (c.method == M::mover_regression) {
    const auto fit = fit_mover_regression(panel);
    if (c.target < 1 || c.target > fit.beta.size()) throw Error(Errc::Precondition, "target out of range");
    r.estimate = fit.beta(c.target - 1);
    r.se = std::numeric_limits<double>::quiet_NaN();
    r.ok = true;
    return r;
  }
  const auto model = fit_propensity(panel, c.propensity);
  MateEstimate est;
  switch (c.method) {
    case M::prop3: {
      const auto g = build_support_graph(panel, model, 1 - c.t, c.t);
      est = estimate_mate_prop3(panel, model, pick_chain(g, c, ChainMode::prop3), c.t, c.mate);
      break;
    }
    case M::prop3_corollary:
      est = estimate_mate_corollary(panel, model, c.t, c.mate);
      break;
    case M::prop4: {
      const auto g = build_support_graph(panel, model, 0, 1);
      est = estimate_mate_prop4(panel, model, pick_chain(g, c, ChainMode::prop4), c.mate);
      break;
    }
    case M::multiperiod: {
      const auto mode = c.multiperiod_mode == MateMethod::prop4prime ? ChainMode::prop4 : ChainMode::prop3;
      const auto g = build_support_graph(panel, model, c.s, c.t);
      est = estimate_mate_multiperiod(panel, model, pick_chain(g, c, mode), c.s, c.t, c.multiperiod_mode, c.mate);
      break;
    }
    case M::gmm: {
      const auto g = build_support_graph(panel, model, c.s, c.t);
      std::vector<Chain> chains;
      if (c.chain.empty())
        chains = enumerate_chains(g, c.target, c.gmm_mode);
      else
        chains.push_back(make_chain(g, c.chain, c.gmm_mode));
      auto opt = c.gmm;
      opt.mode = c.gmm_mode;
      opt.s = c.s;
      opt.t = c.t;
      opt.threads = 1;
      const auto sys = build_moment_system(panel, model, chains, c.target, opt);
      const auto eff = efficient_estimate(sys);
      r.estimate = eff.beta_star;
      r.se = eff.se;
      r.p_value = eff.p_value;
      r.route_estimates.assign(eff.route_estimates.data(), eff.route_estimates.data() + eff.route_estimates.size());
      r.ok = true;
      return r;
    }
    default:
      break;
  }
  r.estimate = est.point;
  r.se = est.se;
  r.ok = true;
  return r;
}

std::optional<double> estimator_truth(const DgpSpec& spec, const EstimatorConfig& c) {
  if (spec.alpha.family == DgpSpec::Alpha::Family::normal && spec.alpha.bins == 0) return std::nullopt;
  const auto oracle = population_oracle(spec);
  using M = EstimatorConfig::Method;
  switch (c.method) {
    case M::prop4:
      return oracle.mate_average(c.target, 0, 1);
    case M::multiperiod:
      if (c.multiperiod_mode == MateMethod::prop4prime) return oracle.mate_average(c.target, c.s, c.t);
      return oracle.mate(c.target, c.t);
    case M::gmm:
      if (c.gmm_mode == ChainMode::prop4) return oracle.mate_average(c.target, std::min(c.s, c.t), std::max(c.s, c.t));
      return oracle.mate(c.target, c.t);
    default:
      return oracle.mate(c.target, c.t);
  }
}

MonteCarloSummary monte_carlo(const DgpSpec& spec, Index n, int reps, const EstimatorConfig& config,
                              std::uint64_t seed, int threads) {
  if (reps < 1) throw Error(Errc::BadConfig, "reps must be positive");
  MonteCarloSummary out;
  out.reps = reps;
  out.truth = estimator_truth(spec, config);
  out.replications.resize(static_cast<std::size_t>(reps));
  auto cfg = config;
  cfg.mate.se.threads = 1;
  parallel_for(reps, threads, [&](std::int64_t r) {
    auto& res = out.replications[static_cast<std::size_t>(r)];
    try {
      const auto panel = generate(spec, n, substream_seed(seed, static_cast<std::uint64_t>(r)));
      res = run_estimator(panel, cfg);
    } catch (const Error& e) {
      res.ok = false;
      res.error = std::string(to_string(e.code()));
    }
  });

  const double z = boost::math::quantile(kStdNormal, 0.5 + config.level / 2.0);
  double sum = 0.0;
  int covered = 0, with_se = 0, rejected = 0;
  for (const auto& r : out.replications) {
    if (!r.ok) {
      ++out.failures[r.error];
      continue;
    }
    ++out.ok;
    sum += r.estimate;
    if (r.p_value < 0.05) ++rejected;
    if (out.truth && std::isfinite(r.se) && r.se > 0.0) {
      ++with_se;
      if (std::abs(r.estimate - *out.truth) <= z * r.se) ++covered;
    }
  }
  if (out.ok > 0) {
    out.mean = sum / out.ok;
    double ss = 0.0;
    for (const auto& r : out.replications)
      if (r.ok) ss += (r.estimate - out.mean) * (r.estimate - out.mean);
    out.sd = out.ok > 1 ? std::sqrt(ss / (out.ok - 1)) : 0.0;
    out.mc_se = out.sd / std::sqrt(static_cast<double>(out.ok));
    out.rejection_rate = static_cast<double>(rejected) / out.ok;
  }
  if (out.truth && out.ok > 0) {
    out.bias = out.mean - *out.truth;
    out.biased = std::abs(out.bias) > 3.0 * out.mc_se;
  }
  out.coverage = with_se > 0 ? static_cast<double>(covered) / with_se : std::numeric_limits<double>::quiet_NaN();
  return out;
}

json MonteCarloSummary::to_json(bool include_replications) const {
  json j;
  j["reps"] = reps;
  j["ok"] = ok;
  j["failures"] = failures;
  j["truth"] = truth ? json(*truth) : json(nullptr);
  j["mean"] = mean;
  j["sd"] = sd;
  j["mc_se"] = mc_se;
  j["bias"] = bias;
  j["coverage"] = std::isfinite(coverage) ? json(coverage) : json(nullptr);
  j["rejection_rate"] = rejection_rate;
  j["biased"] = biased;
  if (include_replications) {
    json reps_j = json::array();
    for (const auto& r : replications) {
      json e = {{"ok", r.ok}};
      if (r.ok) {
        e["estimate"] = r.estimate;
        e["se"] = std::isfinite(r.se) ? json(r.se) : json(nullptr);
        e["p"] = r.p_value;
        if (!r.route_estimates.empty()) e["routes"] = r.route_estimates;
      } else {
        e["error"] = r.error;
      }
      reps_j.push_back(e);
    }
    j["replications"] = reps_j;
  }
  return j;
}

}  // namespace matekit
