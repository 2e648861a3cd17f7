#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "matekit/panel.hpp"

namespace matekit {

enum class PropensityKind { cell_means, multinomial_logit };

std::string to_string(PropensityKind kind);

// Everything needed to refit a model on a resampled panel.
struct PropensityConfig {
  std::optional<PropensityKind> kind;  // nullopt: cell_means if all columns discrete
  std::vector<std::string> columns;    // strata or features; empty means all covariates
  double trim = 0.01;

  static PropensityConfig from_json(const nlohmann::json& j);
};

// A value of the conditioning covariates. For cell means this is a stratum,
// for the logit a distinct feature vector.
struct SupportPoint {
  Eigen::VectorXd x;     // values of the model's columns
  double weight = 0.0;   // panel weight sitting at this point
  std::string label;
};

struct TrimFlag {
  Index point = 0;
  int s = 0, t = 1;  // s < t
  int c = 0, d = 0;  // P(J_s = c, J_t = d | x)
  double score = 0.0;
};

struct PropensityDiagnostics {
  double min_score = 0.0;  // over strictly positive scores
  double max_score = 0.0;
  std::vector<TrimFlag> trimmed;
  double trimmed_weight = 0.0;  // weight of units at points with any flag
  Index trimmed_points = 0;
};

// Logit coefficients for one period pair.
struct LogitFit {
  int s = 0, t = 1;
  std::vector<std::pair<int, int>> categories;  // (origin, destination); first is the base
  Eigen::MatrixXd coef;                         // (K-1) x p
  Eigen::MatrixXd information;                  // Fisher information of vec(coef), column-major by category
  int iterations = 0;
};

// Fitted first step: P(J_s = c, J_t = d | x) for every period pair and
// P(moves at any point | x), evaluated on the support points of the panel.
class PropensityModel {
 public:
  PropensityKind kind() const { return kind_; }
  int n_treatments() const { return J_; }
  int n_periods() const { return T_; }
  const std::vector<std::string>& columns() const { return columns_; }
  const PropensityConfig& config() const { return config_; }

  Index n_points() const { return static_cast<Index>(points_.size()); }
  const std::vector<SupportPoint>& points() const { return points_; }
  Index point_of(Index unit) const { return unit_point_[static_cast<std::size_t>(unit)]; }
  // Locate the support point matching the model columns of x (full covariate row).
  Index find_point(const Eigen::VectorXd& covariate_row) const;

  // P(J_s = c, J_t = d | point); s and t in either order, s != t.
  double score(int c, int s, int d, int t, Index point) const;
  double mover_prob(Index point) const { return mover_(point); }

  // Score positive and not below the trim threshold.
  bool usable(int c, int s, int d, int t, Index point) const;
  bool is_trimmed(int c, int s, int d, int t, Index point) const;

  double trim_threshold() const { return config_.trim; }
  const PropensityDiagnostics& diagnostics() const { return diag_; }
  const std::vector<LogitFit>& logit_fits() const { return logits_; }

  nlohmann::json to_json() const;

  // Same configuration, refit on another panel (e.g. a bootstrap replicate).
  PropensityModel refit(const PanelDataset& panel) const;

  friend PropensityModel fit_cell_means(const PanelDataset&, const std::vector<std::string>&);
  friend PropensityModel fit_multinomial_logit(const PanelDataset&, const std::vector<std::string>&);
  friend PropensityModel trim(const PropensityModel&, double);
  friend PropensityModel fit_propensity(const PanelDataset&, const PropensityConfig&);

 private:
  static int pair_index(int s, int t, int T);
  void update_diagnostics();

  PropensityKind kind_ = PropensityKind::cell_means;
  PropensityConfig config_;
  int J_ = 0, T_ = 0;
  std::vector<std::string> columns_;
  std::vector<Index> column_index_;
  std::vector<SupportPoint> points_;
  std::vector<Index> unit_point_;
  std::vector<Eigen::MatrixXd> tables_;  // per pair (s<t): n_points x (J*J), column c*J+d
  Eigen::VectorXd mover_;
  std::vector<LogitFit> logits_;
  PropensityDiagnostics diag_;
  std::vector<Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>> trim_mask_;  // same shape as tables_
};

PropensityModel fit_cell_means(const PanelDataset& panel, const std::vector<std::string>& strata = {});
PropensityModel fit_multinomial_logit(const PanelDataset& panel, const std::vector<std::string>& features = {});
PropensityModel trim(const PropensityModel& model, double threshold);

// Dispatch on the config (kind auto-selected when unset), then trim.
PropensityModel fit_propensity(const PanelDataset& panel, const PropensityConfig& config);

}  // namespace matekit
