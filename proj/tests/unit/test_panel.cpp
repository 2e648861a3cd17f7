#include <doctest.h>

#include <sstream>

#include "matekit/error.hpp"
#include "matekit/panel.hpp"

using namespace matekit;

namespace {

ColumnMapping mapping(std::vector<CovariateColumn> cov = {}) {
  ColumnMapping m;
  m.unit = "id";
  m.period = "year";
  m.treatment = "firm";
  m.outcome = "wage";
  m.covariates = std::move(cov);
  return m;
}

Errc load_error(const std::string& csv, const ColumnMapping& m) {
  std::istringstream in(csv);
  try {
    load_panel(in, m);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("load succeeded");
  return Errc::Precondition;
}

const char* kCsv =
    "id,year,firm,wage,region\n"
    "a,2001,0,1.0,north\n"
    "a,2000,0,0.5,north\n"
    "b,2000,0,2.0,south\n"
    "b,2001,1,3.5,south\n"
    "c,2000,1,1.0,north\n"
    "c,2001,0,0.0,north\n";

}  // namespace

TEST_CASE("long csv becomes a balanced unit-by-period panel") {
  std::istringstream in(kCsv);
  const auto p = load_panel(in, mapping({{"region", CovariateKind::discrete, {}, {}}}));
  CHECK(p.n_units() == 3);
  CHECK(p.n_periods() == 2);
  CHECK(p.n_treatments() == 2);
  CHECK(p.period_labels() == std::vector<std::string>{"2000", "2001"});
  CHECK(p.outcome(0, 0) == 0.5);
  CHECK(p.outcome(0, 1) == 1.0);
  CHECK(p.treatment(1, 1) == 1);
  CHECK(p.schema()[0].level_labels == std::vector<std::string>{"north", "south"});
  CHECK(p.covariates()(1, 0) == 1.0);
  CHECK(p.is_unit_weighted());

  const auto fd = first_difference(p, 0, 1);
  CHECK(fd.dy(1) == 1.5);
  CHECK(fd.dd(1, 1) == 1.0);
  CHECK(fd.dd(1, 0) == -1.0);
  CHECK(fd.dd.rowwise().sum().cwiseAbs().maxCoeff() == 0.0);

  const auto mc = classify_movers(p);
  CHECK(mc.n_movers == 2);
  CHECK(mc.cell_counts(0, 0) == 1.0);
  CHECK(mc.cell_counts(0, 1) == 1.0);
  CHECK(mc.cell_counts(1, 0) == 1.0);
  CHECK(transition_counts(p, 1, 0)(1, 0) == 1.0);
}

TEST_CASE("weights scale transition counts and leave data untouched") {
  std::istringstream in(kCsv);
  const auto p = load_panel(in, mapping());
  const auto q = p.with_weights(Eigen::Vector3d(2.0, 0.0, 0.5));
  CHECK(transition_counts(q, 0, 1).sum() == doctest::Approx(2.5));
  CHECK(q.outcomes() == p.outcomes());
  CHECK(p.total_weight() == 3.0);
  CHECK_THROWS_AS(p.with_weights(Eigen::Vector3d(1.0, -1.0, 1.0)), Error);
}

TEST_CASE("round trip through csv") {
  std::istringstream in(kCsv);
  const auto p = load_panel(in, mapping());
  std::ostringstream out;
  write_panel_csv(p, out);
  ColumnMapping m;
  m.unit = "unit";
  m.period = "period";
  m.treatment = "treatment";
  m.outcome = "outcome";
  std::istringstream back(out.str());
  const auto q = load_panel(back, m);
  CHECK(q.outcomes() == p.outcomes());
  CHECK(q.treatments() == p.treatments());
  CHECK(q.unit_ids() == p.unit_ids());
}

TEST_CASE("reference treatment is relabelled to code 0") {
  std::istringstream in(kCsv);
  auto m = mapping();
  m.reference_treatment = 1;
  const auto p = load_panel(in, m);
  CHECK(p.treatment(1, 1) == 0);
  CHECK(p.treatment(1, 0) == 1);
  CHECK(p.treatment_relabel() == std::vector<int>{1, 0});
}

TEST_CASE("validation errors carry their codes") {
  CHECK(load_error("id,year,firm,wage\na,1,0,1\na,2,0,1\nb,1,0,1\n", mapping()) == Errc::UnbalancedPanel);
  CHECK(load_error("id,year,firm,wage\na,1,0,1\na,1,0,1\n", mapping()) == Errc::UnbalancedPanel);
  CHECK(load_error("id,year,firm,wage\na,1,x,1\na,2,0,1\n", mapping()) == Errc::BadTreatmentCode);
  CHECK(load_error("id,year,firm,wage\na,1,-1,1\na,2,0,1\n", mapping()) == Errc::BadTreatmentCode);
  CHECK(load_error("id,year,firm,wage\na,1,0,inf\na,2,0,1\n", mapping()) == Errc::NonFiniteOutcome);
  CHECK(load_error("id,year,firm,wage,r\na,1,0,1,1\na,2,0,1,2\n", mapping({{"r", CovariateKind::discrete, {}, {}}})) ==
        Errc::TimeVaryingCovariate);
  CHECK(load_error("id,year,firm\na,1,0\n", mapping()) == Errc::MissingColumn);
  CHECK(load_error("id,year,firm,wage\na,1,0\n", mapping()) == Errc::MalformedInput);
  auto m = mapping();
  m.n_treatments = 2;
  CHECK(load_error("id,year,firm,wage\na,1,0,1\na,2,2,1\n", m) == Errc::BadTreatmentCode);
  std::istringstream in(kCsv);
  const auto p = load_panel(in, mapping());
  CHECK_THROWS_AS(first_difference(p, 1, 0), Error);
  CHECK_THROWS_AS(transition_counts(p, 0, 0), Error);
}

TEST_CASE("column mapping from json") {
  const auto m = ColumnMapping::from_json(nlohmann::json::parse(R"({
    "columns": {"unit": "id", "period": "year", "treatment": "firm", "outcome": "wage",
                "covariates": ["region", {"name": "age", "kind": "continuous"}]},
    "reference_treatment": 1})"));
  CHECK(m.unit == "id");
  CHECK(m.covariates.size() == 2);
  CHECK(m.covariates[1].kind == CovariateKind::continuous);
  CHECK(m.reference_treatment == 1);
  CHECK_THROWS_AS(ColumnMapping::from_json(nlohmann::json::parse(R"({"unit": "id"})")), Error);
}
