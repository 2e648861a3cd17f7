#include "matekit/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "matekit/error.hpp"

namespace matekit {

namespace {

std::vector<Index> resolve_columns(const PanelDataset& panel, const std::vector<std::string>& names,
                                   std::vector<std::string>& resolved) {
  std::vector<Index> idx;
  resolved.clear();
  if (names.empty()) {
    for (Index k = 0; k < panel.n_covariates(); ++k) {
      idx.push_back(k);
      resolved.push_back(panel.schema()[static_cast<std::size_t>(k)].name);
    }
    return idx;
  }
  for (const auto& n : names) {
    auto k = panel.covariate_index(n);
    if (!k) throw Error(Errc::MissingColumn, "no covariate column named '" + n + "'");
    idx.push_back(*k);
    resolved.push_back(n);
  }
  return idx;
}

std::string point_label(const std::vector<std::string>& names, const Eigen::VectorXd& x) {
  if (names.empty()) return "all";
  std::ostringstream os;
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (k) os << ',';
    os << names[k] << '=' << x(static_cast<Index>(k));
  }
  return os.str();
}

using Key = std::vector<double>;

Key key_of(const PanelDataset& panel, Index i, const std::vector<Index>& cols) {
  Key key(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) key[k] = panel.covariates()(i, cols[k]);
  return key;
}

// Groups units by the values of the model columns; points ordered by value.
void build_points(const PanelDataset& panel, const std::vector<Index>& cols, const std::vector<std::string>& names,
                  std::vector<SupportPoint>& points, std::vector<Index>& unit_point,
                  const std::vector<Key>* declared = nullptr) {
  std::map<Key, Index> index;
  if (declared)
    for (const auto& k : *declared) index.emplace(k, 0);
  for (Index i = 0; i < panel.n_units(); ++i) {
    auto key = key_of(panel, i, cols);
    if (declared && !index.count(key))
      throw Error(Errc::MalformedInput, "unit " + panel.unit_ids()[static_cast<std::size_t>(i)] +
                                            " has a covariate value outside the declared levels");
    index.emplace(std::move(key), 0);
  }
  points.clear();
  for (auto& [key, pos] : index) {
    pos = static_cast<Index>(points.size());
    SupportPoint p;
    p.x = Eigen::Map<const Eigen::VectorXd>(key.data(), static_cast<Index>(key.size()));
    p.label = point_label(names, p.x);
    points.push_back(std::move(p));
  }
  unit_point.assign(static_cast<std::size_t>(panel.n_units()), 0);
  for (Index i = 0; i < panel.n_units(); ++i) {
    const Index p = index.at(key_of(panel, i, cols));
    unit_point[static_cast<std::size_t>(i)] = p;
    points[static_cast<std::size_t>(p)].weight += panel.weights()(i);
  }
}

bool moves_any(const PanelDataset& panel, Index i) {
  for (int t = 1; t < panel.n_periods(); ++t)
    if (panel.treatment(i, t) != panel.treatment(i, 0)) return true;
  return false;
}

// Aggregated multinomial logit: counts(p, k) of category k at design row p.
struct LogitResult {
  Eigen::MatrixXd coef;  // (K-1) x q
  Eigen::MatrixXd probs;  // P x K
  Eigen::MatrixXd information;
  int iterations = 0;
};

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& X, const Eigen::MatrixXd& coef) {
  const Index P = X.rows();
  const Index K = coef.rows() + 1;
  Eigen::MatrixXd eta = Eigen::MatrixXd::Zero(P, K);
  eta.rightCols(K - 1) = X * coef.transpose();
  Eigen::MatrixXd pr(P, K);
  for (Index p = 0; p < P; ++p) {
    const double m = eta.row(p).maxCoeff();
    Eigen::RowVectorXd e = (eta.row(p).array() - m).exp().matrix();
    pr.row(p) = e / e.sum();
  }
  return pr;
}

double loglik(const Eigen::MatrixXd& counts, const Eigen::MatrixXd& probs) {
  double ll = 0.0;
  for (Index p = 0; p < counts.rows(); ++p)
    for (Index k = 0; k < counts.cols(); ++k)
      if (counts(p, k) > 0.0) ll += counts(p, k) * std::log(probs(p, k));
  return ll;
}

LogitResult fit_logit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& counts) {
  const Index P = X.rows();
  const Index q = X.cols();
  const Index K = counts.cols();
  const Eigen::VectorXd n = counts.rowwise().sum();
  const double total = n.sum();

  {
    Eigen::MatrixXd Xw = n.cwiseSqrt().asDiagonal() * X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    if (qr.rank() < q)
      throw Error(Errc::RankDeficientFeatures,
                  "feature matrix has rank " + std::to_string(qr.rank()) + " < " + std::to_string(q));
  }

  const Index dim = (K - 1) * q;
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(K - 1, q);
  Eigen::MatrixXd probs = softmax_rows(X, coef);
  double ll = loglik(counts, probs);

  auto gradient_hessian = [&](const Eigen::MatrixXd& pr, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
    g.setZero(dim);
    H.setZero(dim, dim);
    for (Index p = 0; p < P; ++p) {
      if (n(p) <= 0.0) continue;
      const Eigen::VectorXd x = X.row(p).transpose();
      const Eigen::MatrixXd xx = x * x.transpose();
      for (Index a = 1; a < K; ++a) {
        g.segment((a - 1) * q, q) += (counts(p, a) - n(p) * pr(p, a)) * x;
        for (Index b = 1; b < K; ++b) {
          const double v = n(p) * pr(p, a) * ((a == b ? 1.0 : 0.0) - pr(p, b));
          H.block((a - 1) * q, (b - 1) * q, q, q) += v * xx;
        }
      }
    }
  };

  Eigen::VectorXd g;
  Eigen::MatrixXd H;  // negative Hessian (information)
  LogitResult out;
  for (int iter = 1; iter <= 100; ++iter) {
    gradient_hessian(probs, g, H);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) step = H.completeOrthogonalDecomposition().solve(g);

    double scale = 1.0;
    Eigen::MatrixXd trial;
    Eigen::MatrixXd trial_probs;
    double trial_ll = ll;
    for (int halving = 0; halving < 40; ++halving) {
      trial = coef;
      for (Index a = 0; a < K - 1; ++a) trial.row(a) += scale * step.segment(a * q, q).transpose();
      trial_probs = softmax_rows(X, trial);
      trial_ll = loglik(counts, trial_probs);
      if (trial_ll >= ll - 1e-12 * std::abs(ll)) break;
      scale *= 0.5;
    }
    coef = trial;
    probs = trial_probs;
    ll = trial_ll;
    out.iterations = iter;

    if (coef.norm() > 1e3)
      throw Error(Errc::Separation, "logit coefficients diverge (norm > 1e3); a category is perfectly predicted");

    gradient_hessian(probs, g, H);
    const double step_size = scale * step.cwiseAbs().maxCoeff();
    if (g.cwiseAbs().maxCoeff() / total < 1e-8 && step_size < 1e-6 * (1.0 + coef.cwiseAbs().maxCoeff())) {
      out.coef = coef;
      out.probs = probs;
      out.information = H;
      return out;
    }
  }
  for (Index p = 0; p < P; ++p) {
    if (n(p) <= 0.0) continue;
    for (Index k = 0; k < K; ++k)
      if (probs(p, k) < 1e-12 || probs(p, k) > 1.0 - 1e-12)
        throw Error(Errc::Separation, "fitted probabilities numerically 0 or 1; a category is perfectly predicted");
  }
  throw Error(Errc::NoConvergence, "logit Newton iterations did not converge in 100 steps");
}

}  // namespace

std::string to_string(PropensityKind kind) {
  return kind == PropensityKind::cell_means ? "cell_means" : "multinomial_logit";
}

PropensityConfig PropensityConfig::from_json(const nlohmann::json& j) {
  PropensityConfig c;
  try {
    if (j.contains("kind")) {
      const auto k = j.at("kind").get<std::string>();
      if (k == "cell_means")
        c.kind = PropensityKind::cell_means;
      else if (k == "multinomial_logit" || k == "logit")
        c.kind = PropensityKind::multinomial_logit;
      else if (k != "auto")
        throw Error(Errc::BadConfig, "unknown propensity.kind '" + k + "'");
    }
    if (j.contains("features")) c.columns = j.at("features").get<std::vector<std::string>>();
    if (j.contains("strata")) c.columns = j.at("strata").get<std::vector<std::string>>();
    if (j.contains("trim")) c.trim = j.at("trim").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadConfig, std::string("propensity config: ") + e.what());
  }
  if (!(c.trim >= 0.0 && c.trim < 0.5)) throw Error(Errc::BadConfig, "propensity.trim must lie in [0, 0.5)");
  return c;
}

int PropensityModel::pair_index(int s, int t, int T) {
  int idx = 0;
  for (int a = 0; a < s; ++a) idx += T - 1 - a;
  return idx + (t - s - 1);
}

double PropensityModel::score(int c, int s, int d, int t, Index point) const {
  if (s == t || s < 0 || t < 0 || s >= T_ || t >= T_)
    throw Error(Errc::BadPeriodPair, "invalid period pair (" + std::to_string(s) + "," + std::to_string(t) + ")");
  if (s < t) return tables_[static_cast<std::size_t>(pair_index(s, t, T_))](point, c * J_ + d);
  return tables_[static_cast<std::size_t>(pair_index(t, s, T_))](point, d * J_ + c);
}

bool PropensityModel::is_trimmed(int c, int s, int d, int t, Index point) const {
  if (s < t) return trim_mask_[static_cast<std::size_t>(pair_index(s, t, T_))](point, c * J_ + d) != 0;
  return trim_mask_[static_cast<std::size_t>(pair_index(t, s, T_))](point, d * J_ + c) != 0;
}

bool PropensityModel::usable(int c, int s, int d, int t, Index point) const {
  return score(c, s, d, t, point) > 0.0 && !is_trimmed(c, s, d, t, point);
}

Index PropensityModel::find_point(const Eigen::VectorXd& covariate_row) const {
  for (std::size_t p = 0; p < points_.size(); ++p) {
    bool match = true;
    for (std::size_t k = 0; k < column_index_.size() && match; ++k)
      match = covariate_row(column_index_[k]) == points_[p].x(static_cast<Index>(k));
    if (match) return static_cast<Index>(p);
  }
  throw Error(Errc::UnknownSupportPoint, "covariate values not in the fitted support");
}

void PropensityModel::update_diagnostics() {
  diag_ = PropensityDiagnostics{};
  trim_mask_.clear();
  bool first = true;
  std::vector<char> point_flagged(points_.size(), 0);
  for (int s = 0; s < T_; ++s) {
    for (int t = s + 1; t < T_; ++t) {
      const auto& tab = tables_[static_cast<std::size_t>(pair_index(s, t, T_))];
      Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> mask =
          Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>::Zero(tab.rows(), tab.cols());
      for (Index p = 0; p < tab.rows(); ++p) {
        if (points_[static_cast<std::size_t>(p)].weight <= 0.0) continue;
        for (Index k = 0; k < tab.cols(); ++k) {
          const double v = tab(p, k);
          if (v <= 0.0) continue;
          if (first) {
            diag_.min_score = diag_.max_score = v;
            first = false;
          }
          diag_.min_score = std::min(diag_.min_score, v);
          diag_.max_score = std::max(diag_.max_score, v);
          if (v < config_.trim) {
            mask(p, k) = 1;
            point_flagged[static_cast<std::size_t>(p)] = 1;
            diag_.trimmed.push_back({p, s, t, static_cast<int>(k / J_), static_cast<int>(k % J_), v});
          }
        }
      }
      trim_mask_.push_back(std::move(mask));
    }
  }
  for (std::size_t p = 0; p < points_.size(); ++p) {
    if (!point_flagged[p]) continue;
    ++diag_.trimmed_points;
    diag_.trimmed_weight += points_[p].weight;
  }
}

PropensityModel fit_cell_means(const PanelDataset& panel, const std::vector<std::string>& strata) {
  PropensityModel m;
  m.kind_ = PropensityKind::cell_means;
  m.config_.kind = PropensityKind::cell_means;
  m.config_.columns = strata;
  m.config_.trim = 0.0;
  m.J_ = panel.n_treatments();
  m.T_ = panel.n_periods();
  m.column_index_ = resolve_columns(panel, strata, m.columns_);

  bool all_declared = !m.column_index_.empty();
  for (auto k : m.column_index_) {
    const auto& col = panel.schema()[static_cast<std::size_t>(k)];
    if (col.kind != CovariateKind::discrete)
      throw Error(Errc::ContinuousColumn, "stratum column '" + col.name + "' is continuous");
    if (col.levels.empty()) all_declared = false;
  }

  std::vector<Key> declared;
  if (all_declared) {
    declared.push_back({});
    for (auto k : m.column_index_) {
      std::vector<Key> next;
      for (const auto& prefix : declared)
        for (double level : panel.schema()[static_cast<std::size_t>(k)].levels) {
          auto key = prefix;
          key.push_back(level);
          next.push_back(std::move(key));
        }
      declared = std::move(next);
    }
  }
  build_points(panel, m.column_index_, m.columns_, m.points_, m.unit_point_, all_declared ? &declared : nullptr);
  if (all_declared) {
    for (const auto& p : m.points_)
      if (p.weight <= 0.0) throw Error(Errc::EmptyStratum, "stratum " + p.label + " has no observations");
  }

  const int J = m.J_;
  const Index P = m.n_points();
  m.mover_ = Eigen::VectorXd::Zero(P);
  const auto& w = panel.weights();
  for (int s = 0; s < m.T_; ++s) {
    for (int t = s + 1; t < m.T_; ++t) {
      Eigen::MatrixXd tab = Eigen::MatrixXd::Zero(P, J * J);
      for (Index i = 0; i < panel.n_units(); ++i)
        tab(m.point_of(i), panel.treatment(i, s) * J + panel.treatment(i, t)) += w(i);
      for (Index p = 0; p < P; ++p) {
        const double pw = m.points_[static_cast<std::size_t>(p)].weight;
        if (pw > 0.0) tab.row(p) /= pw;
      }
      m.tables_.push_back(std::move(tab));
    }
  }
  for (Index i = 0; i < panel.n_units(); ++i)
    if (moves_any(panel, i)) m.mover_(m.point_of(i)) += w(i);
  for (Index p = 0; p < P; ++p) {
    const double pw = m.points_[static_cast<std::size_t>(p)].weight;
    if (pw > 0.0) m.mover_(p) /= pw;
  }
  m.update_diagnostics();
  return m;
}

PropensityModel fit_multinomial_logit(const PanelDataset& panel, const std::vector<std::string>& features) {
  PropensityModel m;
  m.kind_ = PropensityKind::multinomial_logit;
  m.config_.kind = PropensityKind::multinomial_logit;
  m.config_.columns = features;
  m.config_.trim = 0.0;
  m.J_ = panel.n_treatments();
  m.T_ = panel.n_periods();
  m.column_index_ = resolve_columns(panel, features, m.columns_);
  build_points(panel, m.column_index_, m.columns_, m.points_, m.unit_point_);

  const int J = m.J_;
  const Index P = m.n_points();
  const auto& w = panel.weights();

  // Design: intercept, continuous columns raw, discrete columns as dummies for
  // every observed level but the first.
  std::vector<std::pair<Index, std::optional<double>>> terms;
  for (std::size_t k = 0; k < m.column_index_.size(); ++k) {
    const auto& col = panel.schema()[static_cast<std::size_t>(m.column_index_[k])];
    if (col.kind == CovariateKind::continuous) {
      terms.emplace_back(static_cast<Index>(k), std::nullopt);
      continue;
    }
    std::vector<double> levels;
    for (const auto& p : m.points_)
      if (p.weight > 0.0) levels.push_back(p.x(static_cast<Index>(k)));
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    for (std::size_t l = 1; l < levels.size(); ++l) terms.emplace_back(static_cast<Index>(k), levels[l]);
  }
  Eigen::MatrixXd X(P, 1 + static_cast<Index>(terms.size()));
  for (Index p = 0; p < P; ++p) {
    X(p, 0) = 1.0;
    const auto& x = m.points_[static_cast<std::size_t>(p)].x;
    for (std::size_t r = 0; r < terms.size(); ++r) {
      const double v = x(terms[r].first);
      X(p, 1 + static_cast<Index>(r)) = terms[r].second ? (v == *terms[r].second ? 1.0 : 0.0) : v;
    }
  }

  for (int s = 0; s < m.T_; ++s) {
    for (int t = s + 1; t < m.T_; ++t) {
      Eigen::MatrixXd cell = Eigen::MatrixXd::Zero(P, J * J);
      for (Index i = 0; i < panel.n_units(); ++i)
        cell(m.point_of(i), panel.treatment(i, s) * J + panel.treatment(i, t)) += w(i);
      LogitFit lf;
      lf.s = s;
      lf.t = t;
      std::vector<Index> cols;
      for (int k = 0; k < J * J; ++k)
        if (cell.col(k).sum() > 0.0) {
          cols.push_back(k);
          lf.categories.emplace_back(k / J, k % J);
        }
      Eigen::MatrixXd tab = Eigen::MatrixXd::Zero(P, J * J);
      if (cols.size() == 1) {
        tab.col(cols[0]).setOnes();
        lf.coef.resize(0, X.cols());
      } else if (!cols.empty()) {
        Eigen::MatrixXd counts(P, static_cast<Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) counts.col(static_cast<Index>(k)) = cell.col(cols[k]);
        auto fit = fit_logit(X, counts);
        for (std::size_t k = 0; k < cols.size(); ++k) tab.col(cols[k]) = fit.probs.col(static_cast<Index>(k));
        lf.coef = fit.coef;
        lf.information = fit.information;
        lf.iterations = fit.iterations;
      }
      m.tables_.push_back(std::move(tab));
      m.logits_.push_back(std::move(lf));
    }
  }

  m.mover_ = Eigen::VectorXd::Zero(P);
  if (m.T_ == 2) {
    for (Index p = 0; p < P; ++p) {
      double stay = 0.0;
      for (int c = 0; c < J; ++c) stay += m.tables_[0](p, c * J + c);
      m.mover_(p) = std::clamp(1.0 - stay, 0.0, 1.0);
    }
  } else {
    // With several period pairs "moves at any point" is its own binary outcome.
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(P, 2);
    for (Index i = 0; i < panel.n_units(); ++i) counts(m.point_of(i), moves_any(panel, i) ? 1 : 0) += w(i);
    if (counts.col(1).sum() <= 0.0) {
      m.mover_.setZero();
    } else if (counts.col(0).sum() <= 0.0) {
      m.mover_.setOnes();
    } else {
      auto fit = fit_logit(X, counts);
      m.mover_ = fit.probs.col(1);
    }
  }
  m.update_diagnostics();
  return m;
}

PropensityModel trim(const PropensityModel& model, double threshold) {
  if (!(threshold >= 0.0 && threshold < 0.5))
    throw Error(Errc::Precondition, "trim threshold must lie in [0, 0.5)");
  PropensityModel out = model;
  out.config_.trim = threshold;
  out.update_diagnostics();
  return out;
}

PropensityModel fit_propensity(const PanelDataset& panel, const PropensityConfig& config) {
  PropensityKind kind = PropensityKind::cell_means;
  if (config.kind) {
    kind = *config.kind;
  } else {
    std::vector<std::string> names;
    for (auto k : resolve_columns(panel, config.columns, names))
      if (panel.schema()[static_cast<std::size_t>(k)].kind == CovariateKind::continuous)
        kind = PropensityKind::multinomial_logit;
  }
  PropensityModel m = kind == PropensityKind::cell_means ? fit_cell_means(panel, config.columns)
                                                         : fit_multinomial_logit(panel, config.columns);
  m = trim(m, config.trim);
  m.config_ = config;
  m.config_.kind = kind;
  return m;
}

PropensityModel PropensityModel::refit(const PanelDataset& panel) const { return fit_propensity(panel, config_); }

}  // namespace matekit

namespace matekit {

nlohmann::json PropensityModel::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind_);
  j["columns"] = columns_;
  j["trim"] = config_.trim;
  j["n_treatments"] = J_;
  j["n_periods"] = T_;
  auto points = nlohmann::json::array();
  for (std::size_t p = 0; p < points_.size(); ++p) {
    nlohmann::json pj;
    pj["label"] = points_[p].label;
    pj["x"] = std::vector<double>(points_[p].x.data(), points_[p].x.data() + points_[p].x.size());
    pj["weight"] = points_[p].weight;
    pj["mover_prob"] = mover_(static_cast<Index>(p));
    auto pairs = nlohmann::json::array();
    for (int s = 0; s < T_; ++s)
      for (int t = s + 1; t < T_; ++t) {
        std::vector<std::vector<double>> tab(static_cast<std::size_t>(J_), std::vector<double>(J_));
        for (int c = 0; c < J_; ++c)
          for (int d = 0; d < J_; ++d) tab[c][d] = score(c, s, d, t, static_cast<Index>(p));
        pairs.push_back({{"s", s}, {"t", t}, {"scores", tab}});
      }
    pj["pairs"] = pairs;
    points.push_back(pj);
  }
  j["points"] = points;
  if (kind_ == PropensityKind::multinomial_logit) {
    auto fits = nlohmann::json::array();
    for (const auto& lf : logits_) {
      std::vector<std::vector<double>> coef(static_cast<std::size_t>(lf.coef.rows()));
      for (Index a = 0; a < lf.coef.rows(); ++a) {
        auto& row = coef[static_cast<std::size_t>(a)];
        for (Index b = 0; b < lf.coef.cols(); ++b) row.push_back(lf.coef(a, b));
      }
      fits.push_back({{"s", lf.s}, {"t", lf.t}, {"categories", lf.categories}, {"coef", coef}, {"iterations", lf.iterations}});
    }
    j["logit"] = fits;
  }
  auto flags = nlohmann::json::array();
  for (const auto& f : diag_.trimmed)
    flags.push_back({{"point", points_[static_cast<std::size_t>(f.point)].label}, {"s", f.s}, {"t", f.t}, {"origin", f.c},
                     {"destination", f.d}, {"score", f.score}});
  j["diagnostics"] = {{"min_score", diag_.min_score}, {"max_score", diag_.max_score},
                      {"trimmed", flags}, {"trimmed_points", diag_.trimmed_points},
                      {"trimmed_weight", diag_.trimmed_weight}};
  return j;
}

}  // namespace matekit
