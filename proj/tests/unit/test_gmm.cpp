#include <doctest.h>

#include <random>

#include "dgps.hpp"
#include "matekit/error.hpp"
#include "matekit/gmm.hpp"
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

MomentSystem toy(const Eigen::VectorXd& M, const Eigen::MatrixXd& S, const Eigen::MatrixXd& Omega, double n = 100.0) {
  MomentSystem sys;
  sys.M = M;
  sys.S = S;
  sys.Omega = Omega;
  sys.n = n;
  for (Index p = 0; p < S.rows(); ++p) sys.routes.push_back({0, {}, "r" + std::to_string(p)});
  for (Index k = 0; k < M.size(); ++k) sys.labels.push_back("m" + std::to_string(k));
  return sys;
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, Index k) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd A(k, k + 3);
  for (Index i = 0; i < A.size(); ++i) A.data()[i] = z(rng);
  return A * A.transpose() / static_cast<double>(k) + 0.1 * Eigen::MatrixXd::Identity(k, k);
}

PanelDataset scaled(const PanelDataset& p, double a) {
  return PanelDataset::create(p.unit_ids(), a * p.outcomes(), p.treatments(), p.covariates(), p.schema(),
                              p.n_treatments())
      .with_weights(p.weights());
}

}  // namespace

TEST_CASE("a single route is its own efficient estimate") {
  const auto sys = toy(Eigen::Vector2d(0.3, 0.4), Eigen::RowVector2d(1.0, 1.0), Eigen::Matrix2d::Identity());
  const auto e = efficient_estimate(sys);
  CHECK(e.beta_star == doctest::Approx(0.7));
  CHECK(e.T_stat == 0.0);
  CHECK(e.p_value == 1.0);
  CHECK(e.dof == 0);
  CHECK(e.se == doctest::Approx(std::sqrt(2.0 / 100.0)));
}

TEST_CASE("symmetric routes get equal weight") {
  Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
  const auto e = efficient_estimate(toy(Eigen::Vector2d(1.5, 1.5), S, 2.0 * Eigen::Matrix2d::Identity()));
  CHECK(e.beta_star == doctest::Approx(1.5));
  CHECK(e.route_weights(0) == doctest::Approx(0.5));
  CHECK(e.route_weights(1) == doctest::Approx(0.5));
  CHECK(e.T_stat == doctest::Approx(0.0));
}

TEST_CASE("closed form equals the minimiser of the weighted quadratic form") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 50; ++rep) {
    const Index K = 2 + rep % 4;
    const Index P = 2 + rep % 3;
    Eigen::MatrixXd S(P, K);
    for (Index i = 0; i < S.size(); ++i) S.data()[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
    for (Index p = 0; p < P; ++p) S(p, p % K) = 1.0;
    Eigen::VectorXd M(K);
    for (Index k = 0; k < K; ++k) M(k) = z(rng);
    const auto sys = toy(M, S, random_spd(rng, K));
    const Eigen::MatrixXd V = S * sys.Omega * S.transpose();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(V).eigenvalues();
    if (ev(0) < 1e-6 * ev(ev.size() - 1)) continue;
    const auto e = efficient_estimate(sys);
    // generic route: whiten with the Cholesky factor of W = V^-1 and solve the
    // resulting one-parameter least-squares problem by QR
    const Eigen::MatrixXd W = V.inverse();
    const Eigen::MatrixXd L = W.llt().matrixU();
    const Eigen::VectorXd b = L * (S * M);
    const Eigen::MatrixXd a = L * Eigen::VectorXd::Ones(P);
    const double beta = a.colPivHouseholderQr().solve(b)(0);
    CHECK(std::abs(e.beta_star - beta) < 1e-10);
    CHECK(e.route_weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(e.beta_star - e.route_weights.dot(S * M)) < 1e-12);
    CHECK(e.T_stat >= 0.0);
    const double q = (a * beta - b).squaredNorm() * sys.n;
    CHECK(e.T_stat == doctest::Approx(q).epsilon(1e-9));
  }
}

TEST_CASE("near-singular route covariance falls back to a truncated inverse") {
  Eigen::MatrixXd S(3, 2);
  S << 1, 0, 0, 1, 1, 0;  // route 2 duplicates route 0
  const auto e = efficient_estimate(toy(Eigen::Vector2d(1.0, 2.0), S, Eigen::Matrix2d::Identity()));
  CHECK(e.fallbacks.size() == 1);
  CHECK(e.dof == 1);
  CHECK(e.beta_star == doctest::Approx(1.5));
  CHECK(code_of([&] { efficient_estimate(toy(Eigen::Vector2d(1.0, 2.0), S, Eigen::Matrix2d::Zero())); }) ==
        Errc::SingularSystem);
}

TEST_CASE("pairwise test") {
  Eigen::Matrix2d S = Eigen::Matrix2d::Identity();
  const auto sys = toy(Eigen::Vector2d(1.0, 1.2), S, Eigen::Matrix2d::Identity(), 200.0);
  const auto t = specification_test_pairwise(sys, 0, 1);
  CHECK(t.difference == doctest::Approx(-0.2));
  CHECK(t.se == doctest::Approx(std::sqrt(2.0 / 200.0)));
  CHECK(t.p_value == doctest::Approx(normal_two_sided(-0.2 / t.se)));
  CHECK(code_of([&] { specification_test_pairwise(sys, 1, 1); }) == Errc::SameRoute);
  CHECK(code_of([&] {
          specification_test_pairwise(toy(Eigen::Vector2d(1, 2), Eigen::RowVector2d(1, 0), Eigen::Matrix2d::Identity()), 0, 0);
        }) == Errc::Precondition);
}

TEST_CASE("distribution tails") {
  CHECK(chi2_upper_tail(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(chi2_upper_tail(0.0, 3) == 1.0);
  CHECK(normal_two_sided(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
}

TEST_CASE("moment systems on population panels: every route hits the truth") {
  dgps::Options o;
  o.J = 3;
  const auto pop = population_oracle(DgpSpec::from_json(dgps::full_support(o)));
  const auto p = pop.as_panel();
  const auto m = fit_cell_means(p);
  const auto g = build_support_graph(p, m, 0, 1);

  MomentSystemOptions opt;
  const auto sys = build_moment_system(p, m, enumerate_chains(g, 2, ChainMode::prop3), 2, opt);
  CHECK(sys.routes.size() == 6);  // (0,2): f, r; (0,1,2): ff, fr, rf, rr
  CHECK(sys.labels.size() == 6);
  const Eigen::VectorXd r = sys.route_estimates();
  for (Index k = 0; k < r.size(); ++k) CHECK(std::abs(r(k) - pop.mate(2, 1)) < 1e-10);

  opt.mode = ChainMode::prop4;
  const auto sys4 = build_moment_system(p, m, enumerate_chains(g, 2, ChainMode::prop4), 2, opt);
  CHECK(sys4.routes.size() == 2);
  CHECK(sys4.labels == std::vector<std::string>{"kappa[0,2]", "kappa[0,1]", "kappa[1,2]"});
  const Eigen::VectorXd r4 = sys4.route_estimates();
  for (Index k = 0; k < r4.size(); ++k) CHECK(std::abs(r4(k) - pop.mate_average(2, 0, 1)) < 1e-10);
  CHECK(std::abs(efficient_estimate(sys4).beta_star - pop.mate_average(2, 0, 1)) < 1e-10);

  CHECK(code_of([&] { build_moment_system(p, m, {}, 2, opt); }) == Errc::NoFeasibleChain);
}

TEST_CASE("route cap") {
  dgps::Options o;
  o.J = 5;
  o.xs = {0.0};
  o.px = {1.0};
  o.bins = 1;
  const auto pop = population_oracle(DgpSpec::from_json(dgps::full_support(o)));
  const auto p = pop.as_panel();
  const auto m = fit_cell_means(p);
  const auto chains = enumerate_chains(build_support_graph(p, m, 0, 1), 4, ChainMode::prop3);
  MomentSystemOptions opt;
  CHECK(code_of([&] { build_moment_system(p, m, chains, 4, opt); }) == Errc::RouteExplosion);
  opt.truncate_routes = true;
  const auto sys = build_moment_system(p, m, chains, 4, opt);
  CHECK(sys.routes.size() == 64);
  CHECK(sys.routes_truncated);
  CHECK(sys.routes_total == 2 + 3 * 4 + 6 * 8 + 6 * 16);
  // shortest chains first
  CHECK(sys.routes.front().label == "(0,4):f");
  opt.route_cap = 500;
  opt.truncate_routes = false;
  CHECK(build_moment_system(p, m, chains, 4, opt).routes.size() == 158);
}

TEST_CASE("overidentification statistic is scale invariant") {
  dgps::Options o;
  o.J = 3;
  const auto panel = generate(DgpSpec::from_json(dgps::full_support(o)), 3000, 21);
  const auto m = fit_cell_means(panel);
  const auto chains = enumerate_chains(build_support_graph(panel, m, 0, 1), 2, ChainMode::prop3);
  MomentSystemOptions opt;
  const auto a = efficient_estimate(build_moment_system(panel, m, chains, 2, opt));
  const auto big = scaled(panel, 7.5);
  const auto b = efficient_estimate(build_moment_system(big, fit_cell_means(big), chains, 2, opt));
  CHECK(a.T_stat >= 0.0);
  CHECK(std::abs(a.T_stat - b.T_stat) < 1e-8);
  CHECK(b.beta_star == doctest::Approx(7.5 * a.beta_star).epsilon(1e-10));
}

TEST_CASE("influence and bootstrap covariances agree at moderate n") {
  dgps::Options o;
  o.J = 3;
  const auto panel = generate(DgpSpec::from_json(dgps::full_support(o)), 10000, 33);
  const auto m = fit_cell_means(panel);
  const auto chains = enumerate_chains(build_support_graph(panel, m, 0, 1), 2, ChainMode::prop4);
  MomentSystemOptions opt;
  opt.mode = ChainMode::prop4;
  const auto inf = build_moment_system(panel, m, chains, 2, opt);
  opt.omega = OmegaMethod::bootstrap;
  opt.bootstrap_replicates = 400;
  opt.seed = 5;
  opt.threads = 2;
  const auto boot = build_moment_system(panel, m, chains, 2, opt);
  const double rel = (inf.Omega - boot.Omega).norm() / inf.Omega.norm();
  CAPTURE(rel);
  CHECK(rel < 0.15);
  CHECK(inf.omega_method == "influence_adjusted");
  CHECK(boot.omega_method == "bootstrap");
}
