#pragma once

#include <cstdint>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "matekit/gmm.hpp"
#include "matekit/mate.hpp"
#include "matekit/panel.hpp"

namespace matekit {

// Data-generating process for a partially separable dynamic outcome model:
//   Y_t^{k->j} = alpha + beta[j][t](x) + delta(k, j, x) [t >= 1]
//              + eps_t + shift(path, t) + effect_shift(path, j, t)
// where k is the unit's actual treatment in t-1 and eps_t is mean zero.
// Transitions may depend on x and on a quantile bin of alpha.
struct DgpSpec {
  struct CovariatePoint {
    double x = 0.0;
    double prob = 0.0;
  };
  struct Alpha {
    enum class Family { normal, two_point } family = Family::normal;
    double mean = 0.0;
    double sd = 1.0;
    int bins = 4;  // normal only; 0 = continuous alpha (no exact oracle)
  };
  struct Transition {
    std::size_t x = 0;        // index into covariates
    std::optional<int> bin;   // nullopt = every bin
    std::vector<int> path;    // treatment in each period
    double prob = 0.0;
  };
  struct Persistence {
    int k = 0, j = 0;
    std::optional<std::size_t> x;
    double value = 0.0;
  };
  struct Shift {
    std::vector<int> path;
    int t = 0;
    std::optional<int> j;  // set: shifts Y^j only (effect heterogeneity); unset: shifts eps_t
    std::optional<std::size_t> x;
    double value = 0.0;
  };

  int J = 2, T = 2;
  std::vector<CovariatePoint> covariates;
  Alpha alpha;
  std::vector<std::vector<std::vector<double>>> beta;  // [j][t][x]
  double epsilon_sd = 1.0;
  std::vector<Transition> transitions;
  std::vector<Persistence> persistence;
  std::vector<Shift> shifts;
  std::uint64_t seed = 0;

  static DgpSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  int n_bins() const;  // 0 for continuous alpha
  double bin_prob(int bin) const;
  double bin_mean(int bin) const;  // E[alpha | bin]
  double delta(int k, int j, std::size_t x) const;
  double trend_shift(const std::vector<int>& path, int t, std::size_t x) const;
  double effect_shift(const std::vector<int>& path, int j, int t, std::size_t x) const;
  // Mean of Y_t^{prev->j} for a unit with the given x, alpha and path (eps excluded).
  double potential(std::size_t x, double alpha_value, const std::vector<int>& path, int t, int prev, int j) const;
  // P(path | x, bin) table entries for one conditioning cell.
  std::vector<const Transition*> law(std::size_t x, int bin) const;

  // Which identifying assumptions hold by construction.
  std::map<std::string, bool> assumptions() const;
};

PanelDataset generate(const DgpSpec& spec, Index n, std::uint64_t seed);

class PopulationOracle {
 public:
  struct Cell {
    std::size_t x = 0;
    int bin = 0;
    std::vector<int> path;
    double prob = 0.0;
    double alpha = 0.0;
    Eigen::VectorXd y;  // mean observed outcome per period
    bool mover = false;
  };

  const DgpSpec& spec() const { return spec_; }
  const std::vector<Cell>& cells() const { return cells_; }

  // One pseudo-unit per cell, weight = cell probability, outcomes = cell means.
  // Every estimator run on this panel returns its population value.
  PanelDataset as_panel() const;

  double mover_share() const;
  // E[Y_t^j - Y_t^0 | mover], history at the mover's own previous treatment.
  double mate(int j, int t) const;
  double mate_average(int j, int a, int b) const { return 0.5 * (mate(j, a) + mate(j, b)); }
  // E[Y_t^{prev->j} - Y_t^{prev'->k} | path] with prev, prev' defaulting to the actual previous treatment.
  double path_effect(const std::vector<int>& path, int t, int j, int k, std::optional<int> prev_j = std::nullopt,
                     std::optional<int> prev_k = std::nullopt, std::optional<std::size_t> x = std::nullopt) const;
  double path_prob(const std::vector<int>& path, std::optional<std::size_t> x = std::nullopt) const;
  // Constant effect of j over 0 when effects do not vary with t, x or history.
  std::optional<double> constant_effect(int j) const;
  // Stayer trend gap E[dY | stay j] - E[dY | stay k] (T = 2).
  double stayer_trend_gap(int j, int k) const;
  // Chain-sum term E[Y_t^j - Y_t^0 | 0->j] + E[Y_s^k - Y_s^j | j->k] - E[Y_u^k - Y_u^0 | 0->k] (T = 2).
  double chain_sum_gap(int j, int k, int t, int s, int u) const;
  // Population bias of the period-0 chain formula that comes only from persistence.
  double coi_violation(const Chain& chain) const;

  nlohmann::json to_json() const;

  friend PopulationOracle population_oracle(const DgpSpec& spec);

 private:
  DgpSpec spec_;
  std::vector<Cell> cells_;
};

PopulationOracle population_oracle(const DgpSpec& spec);

struct EstimatorConfig {
  enum class Method { mover_regression, prop3, prop3_corollary, prop4, multiperiod, gmm };
  Method method = Method::prop3;
  int target = 1;
  int t = 1;
  int s = 0;  // multiperiod and gmm
  MateMethod multiperiod_mode = MateMethod::prop3prime;
  ChainMode gmm_mode = ChainMode::prop3;
  std::vector<int> chain;  // empty: shortest feasible chain
  PropensityConfig propensity;
  MateOptions mate;
  MomentSystemOptions gmm;
  double level = 0.95;

  EstimatorConfig() { mate.se.method = SeMethod::influence_auto; }
  static EstimatorConfig from_json(const nlohmann::json& j);
};

struct ReplicationResult {
  bool ok = false;
  std::string error;
  double estimate = 0.0;
  double se = 0.0;
  double p_value = 1.0;               // gmm overidentification test
  std::vector<double> route_estimates;  // gmm only
};

struct MonteCarloSummary {
  int reps = 0;
  int ok = 0;
  std::map<std::string, int> failures;
  std::optional<double> truth;
  double mean = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;
  double bias = 0.0;
  double coverage = 0.0;
  double rejection_rate = 0.0;
  bool biased = false;  // |bias| > 3 MC-SE
  std::vector<ReplicationResult> replications;

  nlohmann::json to_json(bool include_replications = false) const;
};

ReplicationResult run_estimator(const PanelDataset& panel, const EstimatorConfig& config);

// The truth the estimator targets in the population, when the oracle exists.
std::optional<double> estimator_truth(const DgpSpec& spec, const EstimatorConfig& config);

MonteCarloSummary monte_carlo(const DgpSpec& spec, Index n, int reps, const EstimatorConfig& config,
                              std::uint64_t seed, int threads = 1);

}  // namespace matekit
