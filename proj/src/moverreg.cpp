#include "matekit/moverreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "matekit/error.hpp"
#include "matekit/linalg.hpp"

namespace matekit {

namespace {

void require_two_periods(const PanelDataset& panel, const char* what) {
  if (panel.n_periods() != 2)
    throw Error(Errc::Precondition, std::string(what) + " needs a two-period panel, got T=" +
                                        std::to_string(panel.n_periods()));
}

void require_binary(const PanelDataset& panel, const char* what) {
  require_two_periods(panel, what);
  if (panel.n_treatments() != 2)
    throw Error(Errc::Precondition, std::string(what) + " needs J=2, got J=" + std::to_string(panel.n_treatments()));
}

// Forward DiD effect E[Y_t^d - Y_t^c | c->d]: time 1 compares with stayers at
// the origin, time 0 with stayers at the destination.
std::optional<double> mover_effect(const CellMeans& cm, int c, int d, int t) {
  auto movers = cm.at(c, d);
  auto stayers = t == 1 ? cm.at(c, c) : cm.at(d, d);
  if (!movers || !stayers) return std::nullopt;
  return *movers - *stayers;
}

}  // namespace

std::optional<double> CellMeans::at(int c, int d) const {
  if (count(c, d) <= 0.0) return std::nullopt;
  return mean(c, d);
}

CellMeans transition_cell_means(const PanelDataset& panel) {
  require_two_periods(panel, "transition_cell_means");
  const int J = panel.n_treatments();
  CellMeans cm;
  cm.count = Eigen::MatrixXd::Zero(J, J);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(J, J);
  const auto& w = panel.weights();
  for (Index i = 0; i < panel.n_units(); ++i) {
    const int c = panel.treatment(i, 0);
    const int d = panel.treatment(i, 1);
    cm.count(c, d) += w(i);
    sum(c, d) += w(i) * (panel.outcome(i, 1) - panel.outcome(i, 0));
  }
  cm.mean = Eigen::MatrixXd::Constant(J, J, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < J; ++c)
    for (int d = 0; d < J; ++d)
      if (cm.count(c, d) > 0.0) cm.mean(c, d) = sum(c, d) / cm.count(c, d);
  return cm;
}

MoverRegressionFit fit_mover_regression(const PanelDataset& panel, bool include_stayers, bool covariates) {
  require_two_periods(panel, "fit_mover_regression");
  const int J = panel.n_treatments();
  const auto fd = first_difference(panel, 0, 1);
  const auto& w = panel.weights();

  MoverRegressionFit fit;
  fit.include_stayers = include_stayers;
  double mover_weight = 0.0;
  for (Index i = 0; i < panel.n_units(); ++i) {
    const bool mover = panel.treatment(i, 0) != panel.treatment(i, 1);
    if (mover) mover_weight += w(i);
    if (mover || include_stayers) fit.sample.push_back(i);
  }
  if (mover_weight <= 0.0) throw Error(Errc::NoMovers, "no unit changes treatment");

  // Covariate trend terms: dummies (first level omitted) for discrete columns, levels for continuous.
  struct Term {
    Index column;
    std::optional<double> level;
  };
  std::vector<Term> terms;
  if (covariates) {
    for (Index k = 0; k < panel.n_covariates(); ++k) {
      const auto& col = panel.schema()[static_cast<std::size_t>(k)];
      if (col.kind == CovariateKind::continuous) {
        terms.push_back({k, std::nullopt});
        fit.gamma_names.push_back(col.name);
        continue;
      }
      std::set<double> levels;
      for (auto i : fit.sample) levels.insert(panel.covariates()(i, k));
      for (auto it = std::next(levels.begin()); it != levels.end(); ++it) {
        terms.push_back({k, *it});
        fit.gamma_names.push_back(col.name + "=" + std::to_string(*it));
      }
    }
  }

  const Index n = static_cast<Index>(fit.sample.size());
  const Index p = 1 + (J - 1) + static_cast<Index>(terms.size());
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  Eigen::VectorXd wt(n);
  for (Index r = 0; r < n; ++r) {
    const Index i = fit.sample[static_cast<std::size_t>(r)];
    X(r, 0) = 1.0;
    for (int j = 1; j < J; ++j) X(r, j) = fd.dd(i, j);
    for (std::size_t m = 0; m < terms.size(); ++m) {
      const double v = panel.covariates()(i, terms[m].column);
      X(r, J + static_cast<Index>(m)) = terms[m].level ? (v == *terms[m].level ? 1.0 : 0.0) : v;
    }
    y(r) = fd.dy(i);
    wt(r) = w(i);
  }
  const auto ls = weighted_least_squares(X, y, wt);
  fit.tau = ls.coef(0);
  fit.beta = ls.coef.segment(1, J - 1);
  fit.gamma = ls.coef.tail(static_cast<Index>(terms.size()));
  fit.residuals = ls.residuals;
  return fit;
}

double lemma1_omega(double p_plus, double p_minus) {
  const double num = p_plus * (1.0 - p_plus) + p_plus * p_minus;
  const double den = p_plus * (1.0 - p_plus) + p_minus * (1.0 - p_minus) + 2.0 * p_plus * p_minus;
  if (den <= 0.0) throw Error(Errc::RankDeficientDesign, "omega undefined: dD1 has no variation");
  return num / den;
}

double Lemma1Decomposition::reconstruction() const {
  // Terms with zero weight may have undefined cell means; d_stay cancels without stayers.
  double value = 0.0;
  if (no_stayers()) return 0.5 * (d_in.value_or(0.0) - d_out.value_or(0.0));
  if (omega > 0.0) value += omega * (*d_in - *d_stay);
  if (omega < 1.0) value += (1.0 - omega) * (*d_stay - *d_out);
  return value;
}

Lemma1Decomposition decompose_lemma1(const PanelDataset& panel) {
  require_binary(panel, "decompose_lemma1");
  const auto cm = transition_cell_means(panel);
  Lemma1Decomposition out;
  out.n_in = cm.count(0, 1);
  out.n_out = cm.count(1, 0);
  out.n_stay = cm.count(0, 0) + cm.count(1, 1);
  const double total = out.n_in + out.n_out + out.n_stay;
  if (out.n_in + out.n_out <= 0.0) throw Error(Errc::NoMovers, "no unit changes treatment");
  out.p_plus = out.n_in / total;
  out.p_minus = out.n_out / total;
  out.d_in = cm.at(0, 1);
  out.d_out = cm.at(1, 0);
  if (out.n_stay > 0.0) {
    double sum = 0.0;
    for (int c = 0; c < 2; ++c)
      if (cm.count(c, c) > 0.0) sum += cm.count(c, c) * cm.mean(c, c);
    out.d_stay = sum / out.n_stay;
  }
  out.beta1 = fit_mover_regression(panel, true, false).beta(0);
  out.omega = lemma1_omega(out.p_plus, out.p_minus);
  return out;
}

std::string to_string(Prop1Comparison c) {
  switch (c) {
    case Prop1Comparison::in_vs_stay0_t1:
      return "movers_in_vs_stayers_at_0";
    case Prop1Comparison::stay1_vs_out_t1:
      return "stayers_at_1_vs_movers_out";
    case Prop1Comparison::in_vs_stay1_t0:
      return "movers_in_vs_stayers_at_1";
    case Prop1Comparison::stay0_vs_out_t0:
      return "stayers_at_0_vs_movers_out";
  }
  return "unknown";
}

double Prop1Decomposition::reconstruction() const {
  if (no_stayers()) return 0.5 * mover_contrast.value_or(0.0);
  double value = 0.0;
  for (const auto& term : terms)
    if (term.weight > 0.0) value += term.weight * term.did.value();
  return value;
}

double Prop1Decomposition::require(Prop1Comparison c) const {
  const auto& term = terms[static_cast<std::size_t>(c)];
  if (!term.did) throw Error(Errc::MissingCell, "comparison " + to_string(c) + " has an empty mover or stayer cell");
  return *term.did;
}

Prop1Decomposition decompose_prop1(const PanelDataset& panel) {
  const auto l1 = decompose_lemma1(panel);
  const auto cm = transition_cell_means(panel);
  Prop1Decomposition out;
  out.beta1 = l1.beta1;
  out.omega = l1.omega;

  auto diff = [](std::optional<double> a, std::optional<double> b) -> std::optional<double> {
    if (a && b) return *a - *b;
    return std::nullopt;
  };
  const auto m00 = cm.at(0, 0), m11 = cm.at(1, 1);
  out.terms[0] = {Prop1Comparison::in_vs_stay0_t1, 1, +1, diff(l1.d_in, m00), 0.0};
  out.terms[1] = {Prop1Comparison::stay1_vs_out_t1, 1, -1, diff(m11, l1.d_out), 0.0};
  out.terms[2] = {Prop1Comparison::in_vs_stay1_t0, 0, +1, diff(l1.d_in, m11), 0.0};
  out.terms[3] = {Prop1Comparison::stay0_vs_out_t0, 0, -1, diff(m00, l1.d_out), 0.0};

  const double w = l1.omega;
  if (l1.no_stayers()) {
    // Both period assignments are valid; report the (time-1 in, time-0 out) one
    // as primary and the (time-0 in, time-1 out) one as alternative.
    out.mover_contrast = diff(l1.d_in, l1.d_out);
    out.terms[0].weight = 0.5;
    out.terms[3].weight = 0.5;
    out.alternative_weights = {0.0, 0.5, 0.5, 0.0};
    return out;
  }
  const double p = cm.count(0, 0) / l1.n_stay;
  out.p_stay0 = p;
  out.terms[0].weight = w * p;
  out.terms[1].weight = (1.0 - w) * (1.0 - p);
  out.terms[2].weight = w * (1.0 - p);
  out.terms[3].weight = (1.0 - w) * p;
  for (std::size_t k = 0; k < 4; ++k) out.alternative_weights[k] = out.terms[k].weight;
  return out;
}

Prop2Diagnostic diagnose_prop2(const PanelDataset& panel) {
  require_two_periods(panel, "diagnose_prop2");
  const int J = panel.n_treatments();
  if (J < 3) throw Error(Errc::Precondition, "diagnose_prop2 needs at least three treatments");
  const auto cm = transition_cell_means(panel);
  Prop2Diagnostic out;
  out.cell_counts = cm.count;

  for (int j = 0; j < J; ++j) {
    for (int k = j + 1; k < J; ++k) {
      auto mj = cm.at(j, j), mk = cm.at(k, k);
      if (mj && mk) out.stayer_gaps.push_back({j, k, *mj - *mk, cm.count(j, j), cm.count(k, k)});
    }
  }
  for (int j = 1; j < J; ++j) {
    if (cm.count(0, j) <= 0.0) continue;
    for (int k = 1; k < J; ++k) {
      if (k == j || cm.count(j, k) <= 0.0) continue;
      for (int t = 0; t < 2; ++t)
        for (int s = 0; s < 2; ++s)
          for (int u = 0; u < 2; ++u) {
            ChainSumGap g;
            g.j = j;
            g.k = k;
            g.t = t;
            g.s = s;
            g.u = u;
            g.effect_in = mover_effect(cm, 0, j, t);
            g.effect_mid = mover_effect(cm, j, k, s);
            g.effect_direct = mover_effect(cm, 0, k, u);
            if (g.effect_in && g.effect_mid && g.effect_direct)
              g.gap = *g.effect_in + *g.effect_mid - *g.effect_direct;
            out.chain_gaps.push_back(g);
          }
    }
  }
  if (out.stayer_gaps.empty() && out.chain_gaps.empty())
    throw Error(Errc::MissingCell, "no pair of stayer cells and no 0->j->k mover cells are populated");

  // Staircase layout: exactly the cells 0->0, 1->1, 0->1, 1->2 are populated.
  bool layout = J == 3;
  for (int c = 0; c < J && layout; ++c)
    for (int d = 0; d < J && layout; ++d) {
      const bool wanted = (c == 0 && d == 0) || (c == 1 && d == 1) || (c == 0 && d == 1) || (c == 1 && d == 2);
      if (wanted != (cm.count(c, d) > 0.0)) layout = false;
    }
  if (layout) {
    const auto fit = fit_mover_regression(panel, true, false);
    Beta2Decomposition b;
    b.beta1 = fit.beta(0);
    b.beta2 = fit.beta(1);
    b.time0_effect_in = cm.mean(0, 1) - cm.mean(1, 1);
    b.time1_effect_in = cm.mean(0, 1) - cm.mean(0, 0);
    b.time1_effect_mid = cm.mean(1, 2) - cm.mean(1, 1);
    b.p0 = cm.count(0, 0) / (cm.count(0, 0) + cm.count(1, 1));
    b.stayer_trend_gap = cm.mean(1, 1) - cm.mean(0, 0);
    b.noncausal = 2.0 * b.p0 * b.stayer_trend_gap;
    b.counts = {cm.count(0, 0), cm.count(1, 1), cm.count(0, 1), cm.count(1, 2)};
    out.staircase = b;
  }
  return out;
}

}  // namespace matekit
