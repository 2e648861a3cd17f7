#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace matekit {

using Eigen::Index;

enum class CovariateKind { discrete, continuous };

struct CovariateColumn {
  std::string name;
  CovariateKind kind = CovariateKind::discrete;
  // Declared support for a discrete column. Empty means "whatever is observed".
  std::vector<double> levels;
  // Original text of each code when a discrete column was string valued;
  // code k corresponds to level_labels[k].
  std::vector<std::string> level_labels;
};

// How the long-format file maps onto the panel model.
struct ColumnMapping {
  std::string unit;
  std::string period;
  std::string treatment;
  std::string outcome;
  std::vector<CovariateColumn> covariates;
  int reference_treatment = 0;
  std::optional<int> n_treatments;

  static ColumnMapping from_json(const nlohmann::json& config);
};

// Balanced long panel held as dense unit-by-period matrices.
//
// Immutable once built; copies share storage. Every unit carries a
// frequency weight (1 for loaded data); weighted panels are how bootstrap
// replicates and exact population enumerations are expressed, so every
// estimator treats a "sample mean" as a weighted mean.
class PanelDataset {
 public:
  // Validates the invariants and throws matekit::Error on violation.
  static PanelDataset create(std::vector<std::string> unit_ids, Eigen::MatrixXd outcomes,
                             Eigen::MatrixXi treatments, Eigen::MatrixXd covariates,
                             std::vector<CovariateColumn> schema, int n_treatments,
                             std::vector<std::string> period_labels = {},
                             std::vector<int> treatment_relabel = {});

  Index n_units() const { return data_->outcomes.rows(); }
  int n_periods() const { return static_cast<int>(data_->outcomes.cols()); }
  int n_treatments() const { return data_->n_treatments; }
  Index n_covariates() const { return data_->covariates.cols(); }

  const Eigen::MatrixXd& outcomes() const { return data_->outcomes; }
  const Eigen::MatrixXi& treatments() const { return data_->treatments; }
  const Eigen::MatrixXd& covariates() const { return data_->covariates; }
  double outcome(Index i, int t) const { return data_->outcomes(i, t); }
  int treatment(Index i, int t) const { return data_->treatments(i, t); }

  const std::vector<std::string>& unit_ids() const { return data_->unit_ids; }
  const std::vector<std::string>& period_labels() const { return data_->period_labels; }
  const std::vector<CovariateColumn>& schema() const { return data_->schema; }
  std::optional<Index> covariate_index(const std::string& name) const;

  const Eigen::VectorXd& weights() const { return weights_; }
  double total_weight() const { return weights_.sum(); }
  bool is_unit_weighted() const;

  // Same units and values, different frequency weights (must be >= 0).
  PanelDataset with_weights(Eigen::VectorXd weights) const;

  // Mapping applied at load time when the reference treatment was not code 0
  // (raw code -> internal code). Identity otherwise.
  const std::vector<int>& treatment_relabel() const { return data_->relabel; }

 private:
  struct Storage {
    std::vector<std::string> unit_ids;
    std::vector<std::string> period_labels;
    Eigen::MatrixXd outcomes;
    Eigen::MatrixXi treatments;
    Eigen::MatrixXd covariates;
    std::vector<CovariateColumn> schema;
    int n_treatments = 0;
    std::vector<int> relabel;
  };

  PanelDataset(std::shared_ptr<const Storage> data, Eigen::VectorXd weights)
      : data_(std::move(data)), weights_(std::move(weights)) {}

  std::shared_ptr<const Storage> data_;
  Eigen::VectorXd weights_;
};

PanelDataset load_panel(const std::string& path, const ColumnMapping& mapping);
PanelDataset load_panel(std::istream& csv, const ColumnMapping& mapping);

// Writes the panel back out in long format with columns
// unit,period,treatment,outcome,<covariates...>.
void write_panel_csv(const PanelDataset& panel, std::ostream& out);

struct MoverClassification {
  std::vector<char> is_mover;  // per unit
  Index n_movers = 0;
  double mover_weight = 0.0;
  // Two-period panels only (empty otherwise).
  Eigen::MatrixXi delta_d;      // N x J, D_ij1 - D_ij0
  Eigen::VectorXi origin;       // J_i0
  Eigen::VectorXi destination;  // J_i1
  Eigen::MatrixXd cell_counts;  // J x J weighted counts of (origin, destination)
};

MoverClassification classify_movers(const PanelDataset& panel);

// Weighted counts of (J_is = c, J_it = d); rows index c, columns index d.
Eigen::MatrixXd transition_counts(const PanelDataset& panel, int s, int t);

struct FirstDifference {
  int from = 0;
  int to = 1;
  Eigen::VectorXd dy;  // Y_it - Y_is
  Eigen::MatrixXd dd;  // N x J, D_ijt - D_ijs
};

// Requires s < t, both within range.
FirstDifference first_difference(const PanelDataset& panel, int s, int t);

}  // namespace matekit
