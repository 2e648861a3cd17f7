#include "matekit/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include "matekit/error.hpp"

namespace matekit {

namespace {

std::string trim_copy(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// RFC-4180 style splitting: quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    char ch = line[k];
    if (quoted) {
      if (ch == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim_copy(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(trim_copy(field));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

std::optional<long long> parse_integer(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size()) return v;
  // Accept integral floating text such as "2.0".
  auto d = parse_double(s);
  if (d && std::isfinite(*d) && std::floor(*d) == *d) return static_cast<long long>(*d);
  return std::nullopt;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

ColumnMapping ColumnMapping::from_json(const nlohmann::json& config) {
  ColumnMapping m;
  const auto& cols = config.contains("columns") ? config.at("columns") : config;
  try {
    m.unit = cols.at("unit").get<std::string>();
    m.period = cols.at("period").get<std::string>();
    m.treatment = cols.at("treatment").get<std::string>();
    m.outcome = cols.at("outcome").get<std::string>();
    if (cols.contains("covariates")) {
      for (const auto& c : cols.at("covariates")) {
        CovariateColumn col;
        if (c.is_string()) {
          col.name = c.get<std::string>();
        } else {
          col.name = c.at("name").get<std::string>();
          auto kind = c.value("kind", std::string("discrete"));
          if (kind == "continuous") {
            col.kind = CovariateKind::continuous;
          } else if (kind != "discrete") {
            throw Error(Errc::BadConfig, "covariate kind must be discrete or continuous: " + kind);
          }
          if (c.contains("levels")) col.levels = c.at("levels").get<std::vector<double>>();
        }
        m.covariates.push_back(std::move(col));
      }
    }
    m.reference_treatment = config.value("reference_treatment", 0);
    if (config.contains("n_treatments")) m.n_treatments = config.at("n_treatments").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadConfig, std::string("column mapping: ") + e.what());
  }
  return m;
}

PanelDataset PanelDataset::create(std::vector<std::string> unit_ids, Eigen::MatrixXd outcomes,
                                  Eigen::MatrixXi treatments, Eigen::MatrixXd covariates,
                                  std::vector<CovariateColumn> schema, int n_treatments,
                                  std::vector<std::string> period_labels,
                                  std::vector<int> treatment_relabel) {
  const Index n = outcomes.rows();
  const Index T = outcomes.cols();
  if (n_treatments < 1) throw Error(Errc::BadTreatmentCode, "number of treatments must be positive");
  if (T < 2) throw Error(Errc::UnbalancedPanel, "a panel needs at least two periods");
  if (treatments.rows() != n || treatments.cols() != T)
    throw Error(Errc::UnbalancedPanel, "treatment and outcome matrices differ in shape");
  if (static_cast<Index>(unit_ids.size()) != n)
    throw Error(Errc::MalformedInput, "unit id count does not match the number of units");
  if (covariates.size() == 0) covariates.resize(n, 0);
  if (covariates.rows() != n || static_cast<Index>(schema.size()) != covariates.cols())
    throw Error(Errc::MalformedInput, "covariate matrix does not match its schema");
  if (!outcomes.allFinite()) throw Error(Errc::NonFiniteOutcome, "outcome matrix has non-finite entries");
  if ((treatments.array() < 0).any() || (treatments.array() >= n_treatments).any())
    throw Error(Errc::BadTreatmentCode, "treatment codes must lie in 0..J-1");
  if (period_labels.empty()) {
    for (Index t = 0; t < T; ++t) period_labels.push_back(std::to_string(t));
  }
  if (static_cast<Index>(period_labels.size()) != T)
    throw Error(Errc::MalformedInput, "period label count does not match the number of periods");
  if (treatment_relabel.empty()) {
    treatment_relabel.resize(static_cast<std::size_t>(n_treatments));
    for (int j = 0; j < n_treatments; ++j) treatment_relabel[static_cast<std::size_t>(j)] = j;
  }

  auto storage = std::make_shared<Storage>();
  storage->unit_ids = std::move(unit_ids);
  storage->period_labels = std::move(period_labels);
  storage->outcomes = std::move(outcomes);
  storage->treatments = std::move(treatments);
  storage->covariates = std::move(covariates);
  storage->schema = std::move(schema);
  storage->n_treatments = n_treatments;
  storage->relabel = std::move(treatment_relabel);
  return PanelDataset(std::move(storage), Eigen::VectorXd::Ones(n));
}

std::optional<Index> PanelDataset::covariate_index(const std::string& name) const {
  const auto& s = data_->schema;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s[k].name == name) return static_cast<Index>(k);
  }
  return std::nullopt;
}

bool PanelDataset::is_unit_weighted() const { return (weights_.array() == 1.0).all(); }

PanelDataset PanelDataset::with_weights(Eigen::VectorXd weights) const {
  if (weights.size() != n_units()) throw Error(Errc::MalformedInput, "weight vector has the wrong length");
  if (!weights.allFinite() || (weights.array() < 0.0).any())
    throw Error(Errc::MalformedInput, "weights must be finite and nonnegative");
  return PanelDataset(data_, std::move(weights));
}

PanelDataset load_panel(const std::string& path, const ColumnMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MalformedInput, "cannot open " + path);
  return load_panel(in, mapping);
}

PanelDataset load_panel(std::istream& csv, const ColumnMapping& mapping) {
  std::string line;
  if (!std::getline(csv, line)) throw Error(Errc::MalformedInput, "empty input");
  auto header = split_csv_line(line);
  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(Errc::MissingColumn, "column '" + name + "' not found");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_unit = column_of(mapping.unit);
  const std::size_t c_period = column_of(mapping.period);
  const std::size_t c_treat = column_of(mapping.treatment);
  const std::size_t c_out = column_of(mapping.outcome);
  std::vector<std::size_t> c_cov;
  for (const auto& cov : mapping.covariates) c_cov.push_back(column_of(cov.name));

  struct Row {
    std::size_t unit;
    std::string period;
    long long treatment;
    double outcome;
    std::vector<std::string> covariates;
  };
  std::vector<Row> rows;
  std::vector<std::string> unit_ids;
  std::unordered_map<std::string, std::size_t> unit_index;
  std::size_t line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw Error(Errc::MalformedInput, "line " + std::to_string(line_no) + " has " +
                                            std::to_string(fields.size()) + " fields, expected " +
                                            std::to_string(header.size()));
    Row r;
    const auto& uid = fields[c_unit];
    auto [it, inserted] = unit_index.try_emplace(uid, unit_ids.size());
    if (inserted) unit_ids.push_back(uid);
    r.unit = it->second;
    r.period = fields[c_period];
    auto code = parse_integer(fields[c_treat]);
    if (!code)
      throw Error(Errc::BadTreatmentCode,
                  "line " + std::to_string(line_no) + ": treatment '" + fields[c_treat] + "' is not an integer");
    r.treatment = *code;
    auto y = parse_double(fields[c_out]);
    if (!y) throw Error(Errc::MalformedInput, "line " + std::to_string(line_no) + ": outcome is not a number");
    if (!std::isfinite(*y))
      throw Error(Errc::NonFiniteOutcome, "line " + std::to_string(line_no) + ": outcome is not finite");
    r.outcome = *y;
    for (auto c : c_cov) r.covariates.push_back(fields[c]);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw Error(Errc::MalformedInput, "no data rows");

  // Periods: numeric order when every label parses as a number, text order otherwise.
  std::vector<std::string> periods;
  for (const auto& r : rows) periods.push_back(r.period);
  std::sort(periods.begin(), periods.end());
  periods.erase(std::unique(periods.begin(), periods.end()), periods.end());
  bool numeric = std::all_of(periods.begin(), periods.end(), [](const std::string& p) { return parse_double(p).has_value(); });
  if (numeric) {
    std::stable_sort(periods.begin(), periods.end(),
                     [](const std::string& a, const std::string& b) { return *parse_double(a) < *parse_double(b); });
  }
  std::map<std::string, int> period_index;
  for (std::size_t t = 0; t < periods.size(); ++t) period_index[periods[t]] = static_cast<int>(t);
  const int T = static_cast<int>(periods.size());
  if (T < 2) throw Error(Errc::UnbalancedPanel, "a panel needs at least two periods");

  // Treatment coding.
  long long max_code = -1;
  for (const auto& r : rows) {
    if (r.treatment < 0) throw Error(Errc::BadTreatmentCode, "negative treatment code " + std::to_string(r.treatment));
    max_code = std::max(max_code, r.treatment);
  }
  const int J = mapping.n_treatments ? *mapping.n_treatments : static_cast<int>(max_code + 1);
  if (J < 1) throw Error(Errc::BadTreatmentCode, "number of treatments must be positive");
  if (max_code >= J)
    throw Error(Errc::BadTreatmentCode,
                "treatment code " + std::to_string(max_code) + " outside 0.." + std::to_string(J - 1));
  const int ref = mapping.reference_treatment;
  if (ref < 0 || ref >= J) throw Error(Errc::BadConfig, "reference treatment outside 0..J-1");
  std::vector<int> relabel(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) relabel[static_cast<std::size_t>(j)] = j;
  std::swap(relabel[0], relabel[static_cast<std::size_t>(ref)]);

  // Covariate coding.
  std::vector<CovariateColumn> schema = mapping.covariates;
  std::vector<std::map<std::string, double>> string_codes(schema.size());
  for (std::size_t k = 0; k < schema.size(); ++k) {
    bool all_numeric = std::all_of(rows.begin(), rows.end(),
                                   [&](const Row& r) { return parse_double(r.covariates[k]).has_value(); });
    if (schema[k].kind == CovariateKind::continuous && !all_numeric)
      throw Error(Errc::MalformedInput, "continuous covariate '" + schema[k].name + "' has non-numeric values");
    if (!all_numeric) {
      std::vector<std::string> labels;
      for (const auto& r : rows) labels.push_back(r.covariates[k]);
      std::sort(labels.begin(), labels.end());
      labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
      for (std::size_t l = 0; l < labels.size(); ++l) string_codes[k][labels[l]] = static_cast<double>(l);
      schema[k].level_labels = labels;
    }
  }

  const Index N = static_cast<Index>(unit_ids.size());
  const Index P = static_cast<Index>(schema.size());
  Eigen::MatrixXd Y(N, T);
  Eigen::MatrixXi D(N, T);
  Eigen::MatrixXd X(N, P);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(N, T, false);
  std::vector<char> covariate_set(static_cast<std::size_t>(N), 0);
  for (const auto& r : rows) {
    const Index i = static_cast<Index>(r.unit);
    const int t = period_index.at(r.period);
    if (seen(i, t))
      throw Error(Errc::UnbalancedPanel, "unit '" + unit_ids[r.unit] + "' has two rows for period " + r.period);
    seen(i, t) = true;
    Y(i, t) = r.outcome;
    D(i, t) = relabel[static_cast<std::size_t>(r.treatment)];
    for (Index k = 0; k < P; ++k) {
      const auto& text = r.covariates[static_cast<std::size_t>(k)];
      double v = string_codes[static_cast<std::size_t>(k)].empty() ? *parse_double(text)
                                                                   : string_codes[static_cast<std::size_t>(k)].at(text);
      if (covariate_set[r.unit] && X(i, k) != v)
        throw Error(Errc::TimeVaryingCovariate,
                    "covariate '" + schema[static_cast<std::size_t>(k)].name + "' varies over time for unit '" +
                        unit_ids[r.unit] + "'");
      X(i, k) = v;
    }
    covariate_set[r.unit] = 1;
  }
  for (Index i = 0; i < N; ++i) {
    for (int t = 0; t < T; ++t) {
      if (!seen(i, t))
        throw Error(Errc::UnbalancedPanel,
                    "unit '" + unit_ids[static_cast<std::size_t>(i)] + "' has no row for period " + periods[static_cast<std::size_t>(t)]);
    }
  }
  return PanelDataset::create(std::move(unit_ids), std::move(Y), std::move(D), std::move(X), std::move(schema), J,
                              std::move(periods), std::move(relabel));
}

void write_panel_csv(const PanelDataset& panel, std::ostream& out) {
  out << "unit,period,treatment,outcome";
  for (const auto& c : panel.schema()) out << ',' << c.name;
  out << '\n';
  const auto& labels = panel.period_labels();
  for (Index i = 0; i < panel.n_units(); ++i) {
    for (int t = 0; t < panel.n_periods(); ++t) {
      out << panel.unit_ids()[static_cast<std::size_t>(i)] << ',' << labels[static_cast<std::size_t>(t)] << ','
          << panel.treatment(i, t) << ',' << format_double(panel.outcome(i, t));
      for (Index k = 0; k < panel.n_covariates(); ++k) out << ',' << format_double(panel.covariates()(i, k));
      out << '\n';
    }
  }
}

MoverClassification classify_movers(const PanelDataset& panel) {
  const Index N = panel.n_units();
  const int T = panel.n_periods();
  const int J = panel.n_treatments();
  const auto& D = panel.treatments();
  const auto& w = panel.weights();
  MoverClassification mc;
  mc.is_mover.assign(static_cast<std::size_t>(N), 0);
  for (Index i = 0; i < N; ++i) {
    bool mover = (D.row(i).array() != D(i, 0)).any();
    mc.is_mover[static_cast<std::size_t>(i)] = mover ? 1 : 0;
    if (mover) {
      ++mc.n_movers;
      mc.mover_weight += w(i);
    }
  }
  if (T == 2) {
    mc.origin = D.col(0);
    mc.destination = D.col(1);
    mc.delta_d = Eigen::MatrixXi::Zero(N, J);
    for (Index i = 0; i < N; ++i) {
      mc.delta_d(i, D(i, 1)) += 1;
      mc.delta_d(i, D(i, 0)) -= 1;
    }
    mc.cell_counts = transition_counts(panel, 0, 1);
  }
  return mc;
}

Eigen::MatrixXd transition_counts(const PanelDataset& panel, int s, int t) {
  const int T = panel.n_periods();
  if (s < 0 || t < 0 || s >= T || t >= T || s == t)
    throw Error(Errc::BadPeriodPair, "period pair (" + std::to_string(s) + "," + std::to_string(t) + ") is invalid");
  const int J = panel.n_treatments();
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(J, J);
  const auto& D = panel.treatments();
  const auto& w = panel.weights();
  for (Index i = 0; i < panel.n_units(); ++i) counts(D(i, s), D(i, t)) += w(i);
  return counts;
}

FirstDifference first_difference(const PanelDataset& panel, int s, int t) {
  const int T = panel.n_periods();
  if (t <= s || s < 0 || t >= T)
    throw Error(Errc::BadPeriodPair,
                "first difference needs 0 <= s < t < T, got s=" + std::to_string(s) + " t=" + std::to_string(t));
  const Index N = panel.n_units();
  const int J = panel.n_treatments();
  FirstDifference fd;
  fd.from = s;
  fd.to = t;
  fd.dy = panel.outcomes().col(t) - panel.outcomes().col(s);
  fd.dd = Eigen::MatrixXd::Zero(N, J);
  const auto& D = panel.treatments();
  for (Index i = 0; i < N; ++i) {
    fd.dd(i, D(i, t)) += 1.0;
    fd.dd(i, D(i, s)) -= 1.0;
  }
  return fd;
}

}  // namespace matekit
