#include <doctest.h>

#include <random>

#include "dgps.hpp"
#include "matekit/error.hpp"
#include "matekit/moverreg.hpp"
#include "matekit/simlab.hpp"
#include "oracles.hpp"

using namespace matekit;

namespace {

PanelDataset random_panel(std::mt19937_64& rng, Index n, int J, bool stayers = true) {
  std::uniform_int_distribution<int> tr(0, J - 1);
  std::normal_distribution<double> y(0.0, 2.0);
  Eigen::MatrixXd Y(n, 2);
  Eigen::MatrixXi D(n, 2);
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    D(i, 0) = tr(rng);
    do D(i, 1) = tr(rng);
    while (!stayers && D(i, 1) == D(i, 0));
    Y(i, 0) = y(rng);
    Y(i, 1) = Y(i, 0) + 0.3 * D(i, 1) + y(rng);
    ids.push_back(std::to_string(i));
  }
  // make sure every mover type is present
  D(0, 0) = 0, D(0, 1) = 1;
  D(1, 0) = 1, D(1, 1) = 0;
  if (stayers) D(2, 0) = D(2, 1) = 0, D(3, 0) = D(3, 1) = 1;
  return PanelDataset::create(ids, Y, D, {}, {}, J);
}

Eigen::VectorXd normal_equation_beta(const PanelDataset& p) {
  const auto fd = first_difference(p, 0, 1);
  Eigen::MatrixXd X(p.n_units(), p.n_treatments());
  X.col(0).setOnes();
  X.rightCols(p.n_treatments() - 1) = fd.dd.rightCols(p.n_treatments() - 1);
  return oracle::ols_normal(X, fd.dy, p.weights()).tail(p.n_treatments() - 1);
}

}  // namespace

TEST_CASE("mover regression matches the normal equations") {
  std::mt19937_64 rng(42);
  for (int J : {2, 3, 5}) {
    const auto p = random_panel(rng, 400, J);
    const auto fit = fit_mover_regression(p);
    CHECK((fit.beta - normal_equation_beta(p)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(fit.sample.size() == 400);
    const auto movers = fit_mover_regression(p, false);
    CHECK(movers.sample.size() < 400);
  }
}

TEST_CASE("lemma 1 omega reconstruction is exact on random binary panels") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> size(50, 2000);
  for (int rep = 0; rep < 25; ++rep) {
    const auto p = random_panel(rng, size(rng), 2);
    const auto d = decompose_lemma1(p);
    CHECK(std::abs(d.beta1 - d.reconstruction()) < 1e-10);
    CHECK(std::abs(d.beta1 - normal_equation_beta(p)(0)) < 1e-10);
    CHECK(d.omega == doctest::Approx(lemma1_omega(d.p_plus, d.p_minus)));
    CHECK(d.omega >= 0.0);
    CHECK(d.omega <= 1.0);
  }
}

TEST_CASE("lemma 1 omega formula") {
  CHECK(lemma1_omega(0.2, 0.2) == doctest::Approx(0.5));
  CHECK(lemma1_omega(0.3, 0.0) == doctest::Approx(1.0));
  // no stayers: p+ + p- = 1 gives weight 1/2 regardless of the split
  CHECK(lemma1_omega(0.7, 0.3) == doctest::Approx(0.5));
  CHECK_THROWS_AS(lemma1_omega(0.0, 0.0), Error);
}

TEST_CASE("prop 1 terms recombine to the regression coefficient") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto p = random_panel(rng, 800, 2);
    const auto d = decompose_prop1(p);
    CHECK(std::abs(d.beta1 - d.reconstruction()) < 1e-10);
    double wsum = 0.0;
    for (const auto& t : d.terms) wsum += t.weight;
    CHECK(wsum == doctest::Approx(1.0));
  }
}

TEST_CASE("without stayers the coefficient is half the in/out contrast") {
  std::mt19937_64 rng(5);
  const auto p = random_panel(rng, 500, 2, false);
  const auto l = decompose_lemma1(p);
  CHECK(l.no_stayers());
  CHECK(std::abs(l.beta1 - 0.5 * (*l.d_in - *l.d_out)) < 1e-10);
  const auto d = decompose_prop1(p);
  CHECK(d.no_stayers());
  CHECK(d.mover_contrast.has_value());
  CHECK(std::abs(d.beta1 - 0.5 * *d.mover_contrast) < 1e-10);
  CHECK_THROWS_AS(d.require(Prop1Comparison::in_vs_stay0_t1), Error);
}

TEST_CASE("staircase layout splits beta_2 exactly") {
  const auto o = population_oracle(DgpSpec::from_json(dgps::staircase()));
  const auto p = o.as_panel();
  const auto diag = diagnose_prop2(p);
  REQUIRE(diag.staircase.has_value());
  const auto& b = *diag.staircase;
  CHECK(std::abs(b.beta2 - normal_equation_beta(p)(1)) < 1e-10);
  CHECK(std::abs(b.beta2 - (b.time0_effect_in + b.time1_effect_mid + b.noncausal)) < 1e-10);
  CHECK(b.p0 == doctest::Approx(0.25));
  CHECK(b.stayer_trend_gap == doctest::Approx(1.0));
  CHECK(std::abs(b.noncausal - 0.5) < 1e-12);
  CHECK(std::abs(b.stayer_trend_gap - o.stayer_trend_gap(1, 0)) < 1e-12);
  CHECK(std::abs(b.time0_effect_in - o.path_effect({0, 1}, 0, 1, 0)) < 1e-12);
  CHECK(std::abs(b.time1_effect_in - o.path_effect({0, 1}, 1, 1, 0)) < 1e-12);
  CHECK(std::abs(b.time1_effect_mid - o.path_effect({1, 2}, 1, 2, 1)) < 1e-12);
}

TEST_CASE("prop 2 diagnostics list stayer gaps and chain sums") {
  dgps::Options opt;
  opt.J = 3;
  const auto o = population_oracle(DgpSpec::from_json(dgps::full_support(opt)));
  const auto diag = diagnose_prop2(o.as_panel());
  CHECK(diag.stayer_gaps.size() == 3);
  for (const auto& g : diag.stayer_gaps) CHECK(std::abs(g.gap - o.stayer_trend_gap(g.j, g.k)) < 1e-12);
  CHECK(!diag.chain_gaps.empty());
  CHECK_FALSE(diag.staircase.has_value());
}

TEST_CASE("mover regression preconditions") {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Random(4, 2);
  Eigen::MatrixXi D(4, 2);
  D << 0, 0, 1, 1, 0, 0, 1, 1;
  const auto stay = PanelDataset::create({"a", "b", "c", "d"}, Y, D, {}, {}, 2);
  try {
    fit_mover_regression(stay);
    FAIL("expected NoMovers");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NoMovers);
  }
  Eigen::MatrixXd Y3 = Eigen::MatrixXd::Random(4, 3);
  Eigen::MatrixXi D3 = Eigen::MatrixXi::Zero(4, 3);
  D3(0, 2) = 1;
  const auto three = PanelDataset::create({"a", "b", "c", "d"}, Y3, D3, {}, {}, 2);
  CHECK_THROWS_AS(fit_mover_regression(three), Error);
  CHECK_THROWS_AS(decompose_lemma1(three), Error);
}
