#include <doctest.h>

#include <random>

#include "dgps.hpp"
#include "matekit/error.hpp"
#include "matekit/propensity.hpp"
#include "matekit/simlab.hpp"

using namespace matekit;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::Precondition;
}

// Panel with one discrete stratum column and one continuous column.
PanelDataset mixed_panel(Index n, std::uint64_t seed, double slope = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution g(0.5);
  Eigen::MatrixXd Y(n, 2), X(n, 2);
  Eigen::MatrixXi D(n, 2);
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = g(rng) ? 1.0 : 0.0;
    X(i, 1) = z(rng);
    const double eta = -0.5 + slope * X(i, 1) + 0.5 * X(i, 0);
    const double pm = 1.0 / (1.0 + std::exp(-eta));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    D(i, 0) = u(rng) < 0.5 ? 1 : 0;
    D(i, 1) = u(rng) < pm ? 1 - D(i, 0) : D(i, 0);
    Y(i, 0) = z(rng);
    Y(i, 1) = z(rng);
    ids.push_back(std::to_string(i));
  }
  std::vector<CovariateColumn> schema{{"g", CovariateKind::discrete, {}, {}}, {"z", CovariateKind::continuous, {}, {}}};
  return PanelDataset::create(ids, Y, D, X, schema, 2);
}

}  // namespace

TEST_CASE("cell means are weighted transition shares within strata") {
  dgps::Options o;
  o.J = 3;
  const auto panel = generate(DgpSpec::from_json(dgps::full_support(o)), 1500, 2);
  const auto m = fit_cell_means(panel);
  CHECK(m.kind() == PropensityKind::cell_means);
  CHECK(m.n_points() == 2);
  for (Index p = 0; p < m.n_points(); ++p) {
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(3, 3);
    double total = 0.0, movers = 0.0;
    for (Index i = 0; i < panel.n_units(); ++i) {
      if (panel.covariates()(i, 0) != m.points()[static_cast<std::size_t>(p)].x(0)) continue;
      counts(panel.treatment(i, 0), panel.treatment(i, 1)) += 1.0;
      total += 1.0;
      if (panel.treatment(i, 0) != panel.treatment(i, 1)) movers += 1.0;
    }
    for (int c = 0; c < 3; ++c)
      for (int d = 0; d < 3; ++d) {
        CHECK(m.score(c, 0, d, 1, p) == doctest::Approx(counts(c, d) / total));
        CHECK(m.score(d, 1, c, 0, p) == m.score(c, 0, d, 1, p));
      }
    CHECK(m.mover_prob(p) == doctest::Approx(movers / total));
    CHECK(m.points()[static_cast<std::size_t>(p)].weight == total);
  }
  CHECK(m.find_point(Eigen::Vector2d(1.0, 0.0).head(1)) == 1);
  CHECK(code_of([&] { m.find_point(Eigen::VectorXd::Constant(1, 7.0)); }) == Errc::UnknownSupportPoint);
}

TEST_CASE("saturated logit reproduces cell means") {
  dgps::Options o;
  o.J = 2;
  const auto panel = generate(DgpSpec::from_json(dgps::full_support(o)), 2000, 4);
  const auto cm = fit_cell_means(panel);
  const auto lg = fit_multinomial_logit(panel);
  REQUIRE(lg.n_points() == cm.n_points());
  for (Index p = 0; p < cm.n_points(); ++p) {
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < 2; ++d) CHECK(lg.score(c, 0, d, 1, p) == doctest::Approx(cm.score(c, 0, d, 1, p)).epsilon(1e-7));
    CHECK(lg.mover_prob(p) == doctest::Approx(cm.mover_prob(p)).epsilon(1e-7));
  }
  CHECK(lg.logit_fits().size() == 1);
}

TEST_CASE("logit score equations hold at the fitted coefficients") {
  const auto panel = mixed_panel(3000, 9);
  const auto lg = fit_multinomial_logit(panel, {"g", "z"});
  CHECK(lg.kind() == PropensityKind::multinomial_logit);
  // sum_i (1[cell_i = k] - p_k(x_i)) * feature_i = 0 for each non-base category
  const auto& fit = lg.logit_fits()[0];
  for (std::size_t k = 1; k < fit.categories.size(); ++k) {
    const auto [c, d] = fit.categories[k];
    Eigen::Vector3d grad = Eigen::Vector3d::Zero();
    for (Index i = 0; i < panel.n_units(); ++i) {
      const Index p = lg.point_of(i);
      const double r = (panel.treatment(i, 0) == c && panel.treatment(i, 1) == d ? 1.0 : 0.0) - lg.score(c, 0, d, 1, p);
      grad += r * Eigen::Vector3d(1.0, panel.covariates()(i, 0), panel.covariates()(i, 1));
    }
    CHECK(grad.cwiseAbs().maxCoeff() / panel.n_units() < 1e-7);
  }
  for (Index p = 0; p < lg.n_points(); ++p) {
    double total = 0.0;
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < 2; ++d) total += lg.score(c, 0, d, 1, p);
    CHECK(total == doctest::Approx(1.0));
  }
}

TEST_CASE("automatic kind picks the logit for continuous columns") {
  const auto panel = mixed_panel(500, 1);
  PropensityConfig cfg;
  cfg.columns = {"g"};
  CHECK(fit_propensity(panel, cfg).kind() == PropensityKind::cell_means);
  cfg.columns = {"g", "z"};
  const auto m = fit_propensity(panel, cfg);
  CHECK(m.kind() == PropensityKind::multinomial_logit);
  CHECK(m.trim_threshold() == 0.01);
  const auto again = m.refit(panel);
  CHECK(again.score(0, 0, 1, 1, 3) == m.score(0, 0, 1, 1, 3));
}

TEST_CASE("first-step failures") {
  const auto panel = mixed_panel(400, 3);
  CHECK(code_of([&] { fit_cell_means(panel, {"z"}); }) == Errc::ContinuousColumn);
  CHECK(code_of([&] { fit_cell_means(panel, {"nope"}); }) == Errc::MissingColumn);

  // a steep slope separates movers from stayers on z
  const auto sep = mixed_panel(400, 3, 1e6);
  const auto e = code_of([&] { fit_multinomial_logit(sep, {"z"}); });
  CHECK(e == Errc::Separation);

  // duplicate continuous feature
  Eigen::MatrixXd X(panel.n_units(), 2);
  X.col(0) = panel.covariates().col(1);
  X.col(1) = 2.0 * panel.covariates().col(1);
  const auto dup = PanelDataset::create(panel.unit_ids(), panel.outcomes(), panel.treatments(), X,
                                        {{"a", CovariateKind::continuous, {}, {}}, {"b", CovariateKind::continuous, {}, {}}}, 2);
  CHECK(code_of([&] { fit_multinomial_logit(dup); }) == Errc::RankDeficientFeatures);

  // declared level with no units
  Eigen::MatrixXd G = panel.covariates().leftCols(1);
  const auto empty = PanelDataset::create(panel.unit_ids(), panel.outcomes(), panel.treatments(), G,
                                          {{"g", CovariateKind::discrete, {0.0, 1.0, 2.0}, {}}}, 2);
  CHECK(code_of([&] { fit_cell_means(empty); }) == Errc::EmptyStratum);

  CHECK(code_of([] { PropensityConfig::from_json({{"trim", 0.6}}); }) == Errc::BadConfig);
  CHECK(code_of([] { PropensityConfig::from_json({{"kind", "forest"}}); }) == Errc::BadConfig);
  CHECK(code_of([&] { trim(fit_cell_means(panel, {"g"}), -0.1); }) == Errc::Precondition);
}

TEST_CASE("trimming flags small positive scores and leaves zeros alone") {
  // stratum 1 has a single 0->1 mover among many units
  const Index n = 200;
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, 2), X(n, 1);
  Eigen::MatrixXi D = Eigen::MatrixXi::Zero(n, 2);
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = i < 100 ? 0.0 : 1.0;
    if (i % 4 == 0 && i < 100) D(i, 1) = 1;
    ids.push_back(std::to_string(i));
  }
  D(150, 1) = 1;
  const auto panel = PanelDataset::create(ids, Y, D, X, {{"x", CovariateKind::discrete, {}, {}}}, 2);
  const auto raw = fit_cell_means(panel);
  CHECK(raw.diagnostics().trimmed.empty());
  const auto t = trim(raw, 0.05);
  CHECK(t.is_trimmed(0, 0, 1, 1, 1));
  CHECK_FALSE(t.usable(0, 0, 1, 1, 1));
  CHECK(t.usable(0, 0, 1, 1, 0));
  CHECK_FALSE(t.is_trimmed(1, 0, 1, 1, 1));  // structural zero, not trimmed
  CHECK(t.diagnostics().trimmed_points == 1);
  CHECK(t.diagnostics().trimmed_weight == 100.0);
  CHECK(t.diagnostics().min_score == doctest::Approx(0.01));
  const auto j = t.to_json();
  CHECK(j.contains("kind"));
}
