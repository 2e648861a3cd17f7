#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "matekit/panel.hpp"

namespace matekit {

// Least-squares fit of the first-differenced mover regression
//   dY_i = tau + sum_{j != 0} beta_j dD_ij (+ X_i' gamma) + e_i.
// Covariates are time invariant, so their first differences vanish; when
// requested they enter in levels, i.e. as covariate-specific trends.
struct MoverRegressionFit {
  Eigen::VectorXd beta;  // beta(j-1) is the coefficient on treatment j
  double tau = 0.0;
  Eigen::VectorXd gamma;
  std::vector<std::string> gamma_names;
  Eigen::VectorXd residuals;
  std::vector<Index> sample;  // units used, in panel order
  bool include_stayers = true;
};

MoverRegressionFit fit_mover_regression(const PanelDataset& panel, bool include_stayers = true,
                                        bool covariates = false);

// Binary-treatment decomposition of beta_1 into the in-mover/stayer and
// stayer/out-mover growth contrasts.
struct Lemma1Decomposition {
  double beta1 = 0.0;
  double omega = 0.0;
  std::optional<double> d_in;    // E[dY | dD1 = 1]
  std::optional<double> d_stay;  // E[dY | dD1 = 0]; absent without stayers
  std::optional<double> d_out;   // E[dY | dD1 = -1]
  double p_plus = 0.0;
  double p_minus = 0.0;
  double n_in = 0.0, n_stay = 0.0, n_out = 0.0;  // weighted counts

  bool no_stayers() const { return !d_stay.has_value(); }
  double reconstruction() const;
};

Lemma1Decomposition decompose_lemma1(const PanelDataset& panel);

// Omega as a function of the in- and out-mover shares.
double lemma1_omega(double p_plus, double p_minus);

enum class Prop1Comparison {
  in_vs_stay0_t1,   // movers in vs stayers at 0: time-1 effect of in-movers
  stay1_vs_out_t1,  // stayers at 1 vs movers out: time-1 effect of out-movers
  in_vs_stay1_t0,   // movers in vs stayers at 1 (reverse): time-0 effect of in-movers
  stay0_vs_out_t0,  // stayers at 0 vs movers out (reverse): time-0 effect of out-movers
};

std::string to_string(Prop1Comparison c);

struct Prop1Term {
  Prop1Comparison comparison{};
  int period = 1;     // period of the effect identified
  int direction = 1;  // +1 movers into treatment 1, -1 movers out
  std::optional<double> did;
  double weight = 0.0;
};

struct Prop1Decomposition {
  double beta1 = 0.0;
  double omega = 0.0;
  std::optional<double> p_stay0;  // share of stayers sitting at treatment 0
  std::array<Prop1Term, 4> terms{};
  // Populated when there are no stayers: the single mover-vs-mover contrast
  // d_in - d_out and the two equivalent weightings of the period effects.
  std::optional<double> mover_contrast;
  std::array<double, 4> alternative_weights{};

  bool no_stayers() const { return !p_stay0.has_value(); }
  double reconstruction() const;
  // The DiD estimate for one comparison; throws MissingCell when its cells are empty.
  double require(Prop1Comparison c) const;
};

Prop1Decomposition decompose_prop1(const PanelDataset& panel);

struct StayerTrendGap {
  int j = 0, k = 0;
  double gap = 0.0;  // E[dY | stay at j] - E[dY | stay at k]
  double n_j = 0.0, n_k = 0.0;
};

// Sample analogue of E[Y_t^j - Y_t^0 | 0->j] + E[Y_s^k - Y_s^j | j->k] - E[Y_u^k - Y_u^0 | 0->k].
// A term whose cells are empty is absent rather than zero.
struct ChainSumGap {
  int j = 0, k = 0;
  int t = 1, s = 1, u = 1;
  std::optional<double> effect_in;
  std::optional<double> effect_mid;
  std::optional<double> effect_direct;
  std::optional<double> gap;
};

// Exact split of beta_2 for the layout with movers 0->1 and 1->2 and stayers at 0 and 1.
struct Beta2Decomposition {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double time0_effect_in = 0.0;   // E[Y_0^1 - Y_0^0 | 0->1] analogue
  double time1_effect_in = 0.0;   // E[Y_1^1 - Y_1^0 | 0->1] analogue
  double time1_effect_mid = 0.0;  // E[Y_1^2 - Y_1^1 | 1->2] analogue
  double p0 = 0.0;                // share of stayers at 0 among stayers
  double stayer_trend_gap = 0.0;  // E[dY | stay 1] - E[dY | stay 0]
  double noncausal = 0.0;         // 2 p0 * stayer_trend_gap
  std::array<double, 4> counts{};  // 0->0, 1->1, 0->1, 1->2
};

struct Prop2Diagnostic {
  std::vector<StayerTrendGap> stayer_gaps;
  std::vector<ChainSumGap> chain_gaps;
  std::optional<Beta2Decomposition> staircase;
  Eigen::MatrixXd cell_counts;  // J x J
};

Prop2Diagnostic diagnose_prop2(const PanelDataset& panel);

// Weighted means of dY by (origin, destination) cell; NaN where a cell is empty.
struct CellMeans {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd count;
  std::optional<double> at(int c, int d) const;
};

CellMeans transition_cell_means(const PanelDataset& panel);

}  // namespace matekit
