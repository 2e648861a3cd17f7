#include <doctest.h>

#include <map>

#include "dgps.hpp"
#include "matekit/error.hpp"
#include "matekit/parallel.hpp"
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

// P(path) straight from the spec tables, looping path-major.
std::map<std::vector<int>, double> path_marginals(const DgpSpec& s) {
  std::map<std::vector<int>, double> out;
  for (const auto& tr : s.transitions) {
    const double px = s.covariates[tr.x].prob;
    if (tr.bin)
      out[tr.path] += px * s.bin_prob(*tr.bin) * tr.prob;
    else
      out[tr.path] += px * tr.prob;
  }
  return out;
}

// E[Y_t^j - Y_t^0 | mover] by summing over the spec in a different order than the oracle.
double direct_mate(const DgpSpec& s, int j, int t) {
  double num = 0.0, den = 0.0;
  for (int b = s.n_bins() - 1; b >= 0; --b)
    for (std::size_t x = s.covariates.size(); x-- > 0;)
      for (const auto* tr : s.law(x, b)) {
        const auto& path = tr->path;
        if (std::all_of(path.begin(), path.end(), [&](int d) { return d == path[0]; })) continue;
        const double w = s.covariates[x].prob * s.bin_prob(b) * tr->prob;
        const int prev = t > 0 ? path[static_cast<std::size_t>(t - 1)] : 0;
        const double a = s.bin_mean(b);
        num += w * (s.potential(x, a, path, t, prev, j) - s.potential(x, a, path, t, prev, 0));
        den += w;
      }
  return num / den;
}

}  // namespace

TEST_CASE("zero model: outcomes are the fixed effect") {
  nlohmann::json s;
  s["J"] = 2;
  s["T"] = 3;
  s["alpha"] = {{"family", "two_point"}, {"mean", 2.0}, {"sd", 0.5}};
  s["beta"] = {{0, 0, 0}, {0, 0, 0}};
  s["epsilon"] = 0.0;
  s["transition_law"] = {{{"path", {0, 1, 1}}, {"prob", 0.5}}, {{"path", {1, 1, 0}}, {"prob", 0.5}}};
  const auto p = generate(DgpSpec::from_json(s), 500, 3);
  for (Index i = 0; i < p.n_units(); ++i) {
    CHECK(p.outcome(i, 0) == p.outcome(i, 1));
    CHECK(p.outcome(i, 2) == p.outcome(i, 0));
    CHECK((p.outcome(i, 0) == 1.5 || p.outcome(i, 0) == 2.5));
  }
}

TEST_CASE("oracle cells reproduce the spec marginals") {
  dgps::Options o;
  o.J = 3;
  o.T = 3;
  const auto spec = DgpSpec::from_json(dgps::full_support(o));
  const auto pop = population_oracle(spec);
  double total = 0.0;
  std::map<std::vector<int>, double> by_path;
  std::vector<double> by_x(spec.covariates.size(), 0.0), by_bin(static_cast<std::size_t>(spec.n_bins()), 0.0);
  for (const auto& c : pop.cells()) {
    total += c.prob;
    by_path[c.path] += c.prob;
    by_x[c.x] += c.prob;
    by_bin[static_cast<std::size_t>(c.bin)] += c.prob;
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  for (std::size_t x = 0; x < by_x.size(); ++x) CHECK(std::abs(by_x[x] - spec.covariates[x].prob) < 1e-12);
  for (int b = 0; b < spec.n_bins(); ++b) CHECK(std::abs(by_bin[static_cast<std::size_t>(b)] - spec.bin_prob(b)) < 1e-12);
  const auto direct = path_marginals(spec);
  CHECK(direct.size() == by_path.size());
  for (const auto& [path, prob] : direct) {
    CHECK(std::abs(by_path[path] - prob) < 1e-12);
    CHECK(std::abs(pop.path_prob(path) - prob) < 1e-12);
  }
  for (int j = 1; j < 3; ++j)
    for (int t = 0; t < 3; ++t) CHECK(std::abs(pop.mate(j, t) - direct_mate(spec, j, t)) < 1e-12);
}

TEST_CASE("bin means integrate back to the alpha mean") {
  dgps::Options o;
  o.bins = 5;
  nlohmann::json s = dgps::full_support(o);
  s["alpha"] = {{"family", "normal"}, {"mean", 1.3}, {"sd", 2.0}, {"bins", 5}};
  const auto spec = DgpSpec::from_json(s);
  double m = 0.0;
  for (int b = 0; b < 5; ++b) {
    CHECK(spec.bin_prob(b) == doctest::Approx(0.2));
    m += spec.bin_prob(b) * spec.bin_mean(b);
    if (b > 0) CHECK(spec.bin_mean(b) > spec.bin_mean(b - 1));
  }
  CHECK(std::abs(m - 1.3) < 1e-10);
  CHECK(std::abs(spec.bin_mean(2) - 1.3) < 1e-10);
}

TEST_CASE("sampled transition frequencies match the law") {
  dgps::Options o;
  o.J = 3;
  const auto spec = DgpSpec::from_json(dgps::full_support(o));
  const Index n = 40000;
  const auto p = generate(spec, n, 11);
  std::map<std::vector<int>, double> counts;
  for (Index i = 0; i < n; ++i) counts[{p.treatment(i, 0), p.treatment(i, 1)}] += 1.0;
  for (const auto& [path, prob] : path_marginals(spec)) {
    const double se = std::sqrt(prob * (1.0 - prob) / static_cast<double>(n));
    CAPTURE(prob);
    CHECK(std::abs(counts[path] / static_cast<double>(n) - prob) < 3.0 * se);
  }
  // eps has mean zero so each period mean matches the oracle within sampling error
  const auto pop = population_oracle(spec);
  for (int t = 0; t < 2; ++t) {
    double pop_mean = 0.0;
    for (const auto& c : pop.cells()) pop_mean += c.prob * c.y(t);
    const double sample = p.outcomes().col(t).mean();
    CHECK(std::abs(sample - pop_mean) < 4.0 * std::sqrt(3.0 / static_cast<double>(n)));
  }
}

TEST_CASE("spec validation") {
  const auto base = dgps::full_support({});
  auto bad = base;
  bad.erase("J");
  CHECK(code_of([&] { DgpSpec::from_json(bad); }) == Errc::InvalidSpec);
  bad = base;
  bad["transition_law"][0]["prob"] = 0.9;
  CHECK(code_of([&] { DgpSpec::from_json(bad); }) == Errc::InvalidSpec);
  bad = base;
  bad["transition_law"][0]["path"] = {0, 7};
  CHECK(code_of([&] { DgpSpec::from_json(bad); }) == Errc::InvalidSpec);
  bad = base;
  bad["beta"] = {{0.0, 0.0}};
  CHECK(code_of([&] { DgpSpec::from_json(bad); }) == Errc::InvalidSpec);
  bad = base;
  bad["covariates"][0]["prob"] = 0.1;
  CHECK(code_of([&] { DgpSpec::from_json(bad); }) == Errc::InvalidSpec);
  CHECK(code_of([&] { generate(DgpSpec::from_json(base), 0, 1); }) == Errc::InvalidSpec);

  auto cont = base;
  cont["alpha"]["bins"] = 0;
  cont.erase("covariates");
  cont["beta"] = {{0.0, 0.1}, {0.5, 0.8}};
  cont["transition_law"] = {{{"path", {0, 0}}, {"prob", 0.5}}, {{"path", {0, 1}}, {"prob", 0.5}}};
  const auto spec = DgpSpec::from_json(cont);
  CHECK(spec.n_bins() == 0);
  CHECK(code_of([&] { population_oracle(spec); }) == Errc::InfiniteSupport);
  CHECK(generate(spec, 50, 1).n_units() == 50);

  const auto round = DgpSpec::from_json(DgpSpec::from_json(base).to_json()).to_json();
  CHECK(round == DgpSpec::from_json(base).to_json());
}

TEST_CASE("assumption flags") {
  dgps::Options o;
  o.constant_effects = true;
  auto a = DgpSpec::from_json(dgps::full_support(o)).assumptions();
  CHECK(a["CPT"]);
  CHECK(a["CEH"]);
  CHECK(a["IO"]);
  CHECK(a["CE"]);
  o.persistence = 0.5;
  a = DgpSpec::from_json(dgps::full_support(o)).assumptions();
  CHECK_FALSE(a["IO"]);
  CHECK_FALSE(a["COI"]);
  CHECK(a["CPT"]);
  auto s = dgps::full_support({});
  s["epsilon"]["shifts"] = {{{"path", {0, 1}}, {"t", 1}, {"value", 0.4}}};
  CHECK_FALSE(DgpSpec::from_json(s).assumptions()["CPT"]);
}

TEST_CASE("constant effects: the mover effect is the structural gap") {
  dgps::Options o;
  o.J = 3;
  o.constant_effects = true;
  const auto pop = population_oracle(DgpSpec::from_json(dgps::full_support(o)));
  for (int j = 1; j < 3; ++j) {
    REQUIRE(pop.constant_effect(j).has_value());
    CHECK(std::abs(*pop.constant_effect(j) - 0.7 * j) < 1e-12);
    CHECK(std::abs(pop.mate(j, 0) - 0.7 * j) < 1e-12);
    CHECK(std::abs(pop.mate(j, 1) - 0.7 * j) < 1e-12);
  }
  CHECK_FALSE(population_oracle(DgpSpec::from_json(dgps::full_support({}))).constant_effect(1).has_value());
}

TEST_CASE("monte carlo replications are reproducible") {
  dgps::Options o;
  const auto spec = DgpSpec::from_json(dgps::full_support(o));
  EstimatorConfig cfg;
  cfg.method = EstimatorConfig::Method::prop3;
  cfg.target = 1;

  const auto one = monte_carlo(spec, 800, 1, cfg, 99);
  const auto direct = run_estimator(generate(spec, 800, substream_seed(99, 0)), cfg);
  REQUIRE(one.replications.size() == 1);
  CHECK(one.replications[0].estimate == direct.estimate);
  CHECK(one.replications[0].se == direct.se);

  const auto a = monte_carlo(spec, 800, 12, cfg, 7, 1);
  const auto b = monte_carlo(spec, 800, 12, cfg, 7, 3);
  CHECK(a.ok == 12);
  for (std::size_t r = 0; r < 12; ++r) CHECK(a.replications[r].estimate == b.replications[r].estimate);
  CHECK(a.mean == b.mean);
  REQUIRE(a.truth.has_value());
  CHECK(std::abs(*a.truth - population_oracle(spec).mate(1, 1)) < 1e-12);
  const auto j = a.to_json(true);
  CHECK(j["replications"].size() == 12);
  CHECK(j.contains("coverage"));
}

TEST_CASE("estimator failures are tallied, not thrown") {
  nlohmann::json s = dgps::no_stayers(0.5, 0.5);
  EstimatorConfig cfg;
  cfg.method = EstimatorConfig::Method::prop3;
  const auto mc = monte_carlo(DgpSpec::from_json(s), 200, 3, cfg, 1);
  CHECK(mc.ok == 0);
  CHECK(mc.failures.size() == 1);
  CHECK(mc.failures.begin()->second == 3);
}
