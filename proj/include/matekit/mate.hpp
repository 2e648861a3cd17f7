#pragma once

#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "matekit/chains.hpp"
#include "matekit/propensity.hpp"

namespace matekit {

// One weighted moment E[dY * weight]:
//   rho      rho^{c,d}     movers c->d against stayers at c (sign fixed by the period order)
//   neg_rho  -rho^{c,d}
//   kappa    kappa^{c,d}   movers c->d against movers d->c
struct MomentSpec {
  enum class Kind { rho, neg_rho, kappa };
  Kind kind = Kind::rho;
  int c = 0, d = 1;

  std::string label() const;
  bool operator==(const MomentSpec& o) const { return kind == o.kind && c == o.c && d == o.d; }
};

// Per-unit weights of several moments for the period pair (s, t) on a common
// retained sample. t is the identified period and s the comparison period for
// rho; kappa is symmetric in the pair. dy is the later minus the earlier outcome.
struct MomentWeights {
  int s = 0, t = 1;
  std::vector<MomentSpec> specs;
  Eigen::VectorXd dy;
  Eigen::MatrixXd W;             // units x moments, zero outside the retained sample
  Eigen::VectorXd retained;      // 1 kept, 0 dropped by trimming
  Eigen::VectorXd mover;         // 1 if the unit moves between any two periods
  double mover_share = 0.0;      // weighted, over the retained sample
  double n_retained = 0.0;       // weighted
  std::vector<Index> excluded_points;
};

// Points that must be dropped because a denominator the moments need is
// trimmed. Throws InfeasibleChain on a structural zero, DegenerateDenominator
// on an untrimmed score below 1e-12. `needed(point, k)` may switch off moment k
// at a point (used by the data-driven corollary weights).
std::vector<Index> screen_points(const PropensityModel& model, int s, int t, const std::vector<MomentSpec>& specs,
                                 const std::vector<std::vector<char>>* needed = nullptr);

MomentWeights moment_weights(const PanelDataset& panel, const PropensityModel& model, int s, int t,
                             const std::vector<MomentSpec>& specs, const std::vector<Index>& excluded_points);

// Influence contributions of combined = W * coef (coef per support point: n_points x K).
// Known: first step treated as fixed. Adjusted: exact linearisation of the
// cell-means first step (stratum shares and cell frequencies estimated).
Eigen::VectorXd influence_known(const PanelDataset& panel, const MomentWeights& mw, const Eigen::VectorXd& combined,
                                double point);
Eigen::VectorXd influence_adjusted(const PanelDataset& panel, const PropensityModel& model, const MomentWeights& mw,
                                   const Eigen::VectorXd& combined, double point);

enum class MateMethod { prop3, prop3_corollary, prop4, prop3prime, prop4prime };
enum class Estimand { period, average };
enum class SeMethod { bootstrap, influence_known, influence_adjusted, influence_auto, none };

std::string to_string(MateMethod m);
std::string to_string(SeMethod m);
SeMethod se_method_from_string(const std::string& s);

struct SeOptions {
  SeMethod method = SeMethod::bootstrap;
  int replicates = 500;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct MateOptions {
  bool assume_impersistence = false;
  std::optional<std::vector<double>> link_weights;  // overrides the chain's default w_m
  SeOptions se;
};

struct MateEstimate {
  int target = 1;
  Estimand estimand = Estimand::period;
  int s = 0, t = 1;
  MateMethod method = MateMethod::prop3;
  Chain chain;
  std::vector<std::string> moments;
  double point = 0.0;
  double se = 0.0;
  SeMethod se_method = SeMethod::none;
  int bootstrap_ok = 0, bootstrap_failed = 0;
  double n_effective = 0.0;  // weighted units with a nonzero weight
  double n_retained = 0.0;
  double mover_share = 0.0;
  std::vector<std::string> excluded_points;
  double excluded_weight = 0.0;
  bool assume_impersistence = false;
  Eigen::VectorXd corollary_weights;  // w* per support point (corollary only)

  std::string estimand_label() const;
  nlohmann::json to_json() const;
};

MateEstimate estimate_mate_prop3(const PanelDataset& panel, const PropensityModel& model, const Chain& chain, int t,
                                 const MateOptions& options = {});
MateEstimate estimate_mate_corollary(const PanelDataset& panel, const PropensityModel& model, int t,
                                     const MateOptions& options = {});
MateEstimate estimate_mate_prop4(const PanelDataset& panel, const PropensityModel& model, const Chain& chain,
                                 const MateOptions& options = {});
MateEstimate estimate_mate_multiperiod(const PanelDataset& panel, const PropensityModel& model, const Chain& chain,
                                       int s, int t, MateMethod mode, const MateOptions& options = {});

// Frequency weights of one nonparametric bootstrap draw over units.
Eigen::VectorXd bootstrap_weights(const PanelDataset& panel, std::uint64_t seed);

}  // namespace matekit
