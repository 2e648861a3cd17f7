#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matekit/propensity.hpp"

namespace matekit {

enum class ChainMode { prop3, prop4 };
enum class LinkMode { forward, reverse, both };

std::string to_string(ChainMode mode);
std::string to_string(LinkMode mode);

// Support of the link c -> d for the period pair (s, t): s is the comparison
// period, t the period whose effect is identified.
//   forward:  P(J_s=c, J_t=d | x) > 0 and P(J_s=c, J_t=c | x) > 0   (movers vs stayers at c)
//   reverse:  P(J_s=d, J_t=c | x) > 0 and P(J_s=d, J_t=d | x) > 0   (stayers at d vs movers d -> c)
//   two_way:  P(J_s=c, J_t=d | x) > 0 and P(J_s=d, J_t=c | x) > 0   (movers in both directions)
// each required at every support point. A point whose score is positive but
// below the trim threshold leaves the link's support instead of breaking it.
struct LinkSupport {
  int c = 0, d = 0;
  bool forward = false;
  bool reverse = false;
  bool two_way = false;
  std::vector<Index> forward_trimmed, reverse_trimmed, two_way_trimmed;
  std::string forward_block, reverse_block, two_way_block;  // first point where the condition fails
  // Raw weighted counts at (s, t).
  double movers_cd = 0.0, movers_dc = 0.0, stayers_c = 0.0, stayers_d = 0.0;
};

struct SupportGraph {
  int n_treatments = 0;
  int s = 0, t = 1;
  std::vector<Index> support;  // points with positive weight and positive mover probability
  std::vector<std::string> point_labels;
  std::vector<LinkSupport> links;  // index c * J + d; diagonal unused

  const LinkSupport& link(int c, int d) const { return links[static_cast<std::size_t>(c * n_treatments + d)]; }
  bool allows(int c, int d, ChainMode mode) const;
};

SupportGraph build_support_graph(const PanelDataset& panel, const PropensityModel& model, int s, int t);

// Every link satisfies all three conditions; no data behind it.
SupportGraph complete_support_graph(int n_treatments);

struct Chain {
  std::vector<int> nodes;  // 0 = c_0, ..., c_M = target
  std::vector<LinkMode> modes;
  std::vector<double> weights;  // w_m on the forward term
  ChainMode mode = ChainMode::prop3;

  int target() const { return nodes.back(); }
  std::size_t n_links() const { return nodes.size() - 1; }
  std::string to_string() const;
};

// Simple paths 0 -> target whose links all satisfy the mode's condition,
// ordered by length and then lexicographically. Default weights: 1/2 when both
// prop3 conditions hold, 1 with only the forward one, 0 with only the reverse one.
std::vector<Chain> enumerate_chains(const SupportGraph& graph, int target, ChainMode mode);

// Builds a chain from an explicit node list, checking every link against the graph.
Chain make_chain(const SupportGraph& graph, const std::vector<int>& nodes, ChainMode mode);

// sum_{k=0}^{J-2} k! * C(J-2, k)^2; throws Overflow rather than wrapping.
std::uint64_t count_all_chains(int n_treatments);

std::string export_dot(const SupportGraph& graph, const std::vector<Chain>& chains = {});

}  // namespace matekit
