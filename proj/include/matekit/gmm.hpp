#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "matekit/mate.hpp"

namespace matekit {

// Upper-tail chi-square probability and two-sided normal p-value.
double chi2_upper_tail(double x, double dof);
double normal_two_sided(double z);

enum class OmegaMethod { influence_known, influence_adjusted, influence_auto, bootstrap };

std::string to_string(OmegaMethod m);
OmegaMethod omega_method_from_string(const std::string& s);

struct MomentSystemOptions {
  ChainMode mode = ChainMode::prop3;  // prop3: rho moments for period t; prop4: kappa moments
  int s = 0, t = 1;
  std::size_t route_cap = 64;
  bool truncate_routes = false;  // keep the first route_cap routes instead of failing
  OmegaMethod omega = OmegaMethod::influence_auto;
  int bootstrap_replicates = 200;
  std::uint64_t seed = 0;
  int threads = 1;
};

// One way of adding up moments along a chain: a direction per link.
struct Route {
  std::size_t chain = 0;  // index into MomentSystem::chains
  std::vector<LinkMode> directions;
  std::string label;
};

struct MomentSystem {
  int target = 1;
  ChainMode mode = ChainMode::prop3;
  int s = 0, t = 1;
  std::vector<Chain> chains;
  std::vector<Route> routes;
  std::vector<MomentSpec> specs;
  std::vector<std::string> labels;
  Eigen::VectorXd M;          // K
  Eigen::MatrixXd S;          // P x K
  Eigen::MatrixXd Omega;      // K x K, variance of sqrt(N) M
  Eigen::MatrixXd influence;  // units x K (empty for the bootstrap)
  double n = 0.0;             // retained sample size
  std::string omega_method;
  bool routes_truncated = false;
  std::size_t routes_total = 0;
  std::vector<std::string> excluded_points;

  Eigen::VectorXd route_estimates() const { return S * M; }
};

MomentSystem build_moment_system(const PanelDataset& panel, const PropensityModel& model,
                                 const std::vector<Chain>& chains, int target, const MomentSystemOptions& options = {});

struct EfficientEstimate {
  double beta_star = 0.0;
  double se = 0.0;
  Eigen::VectorXd route_weights;   // P, sums to one
  Eigen::VectorXd moment_weights;  // K, route_weights' S
  Eigen::VectorXd route_estimates;
  double T_stat = 0.0;
  int dof = 0;
  double p_value = 1.0;
  double condition = 1.0;
  std::vector<std::string> fallbacks;

  nlohmann::json to_json(const MomentSystem& sys) const;
};

EfficientEstimate efficient_estimate(const MomentSystem& sys);

struct PairwiseTest {
  std::size_t p1 = 0, p2 = 1;
  double difference = 0.0;
  double se = 0.0;
  double p_value = 1.0;
};

PairwiseTest specification_test_pairwise(const MomentSystem& sys, std::size_t p1, std::size_t p2);

}  // namespace matekit
