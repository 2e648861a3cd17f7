#include "matekit/chains.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

#include "matekit/error.hpp"

namespace matekit {

namespace {

// Checks two scores at every support point. Exact zeros break the condition;
// trimmed scores remove the point from the condition's support.
void check_condition(const PropensityModel& model, const SupportGraph& g, int c1, int d1, int c2, int d2, bool& ok,
                     std::vector<Index>& trimmed, std::string& block) {
  ok = true;
  bool any_usable = false;
  for (auto p : g.support) {
    const double a = model.score(c1, g.s, d1, g.t, p);
    const double b = model.score(c2, g.s, d2, g.t, p);
    if (a <= 0.0 || b <= 0.0) {
      ok = false;
      std::ostringstream os;
      os << "point " << model.points()[static_cast<std::size_t>(p)].label << ": P(J_" << g.s << "=" << (a <= 0.0 ? c1 : c2)
         << ", J_" << g.t << "=" << (a <= 0.0 ? d1 : d2) << ") = 0";
      block = os.str();
      break;
    }
    if (model.is_trimmed(c1, g.s, d1, g.t, p) || model.is_trimmed(c2, g.s, d2, g.t, p))
      trimmed.push_back(p);
    else
      any_usable = true;
  }
  if (ok && !any_usable) {
    ok = false;
    block = g.support.empty() ? "no support point has movers" : "every support point is trimmed";
  }
}

}  // namespace

std::string to_string(ChainMode mode) { return mode == ChainMode::prop3 ? "prop3" : "prop4"; }

std::string to_string(LinkMode mode) {
  switch (mode) {
    case LinkMode::forward:
      return "forward";
    case LinkMode::reverse:
      return "reverse";
    case LinkMode::both:
      return "both";
  }
  return "unknown";
}

bool SupportGraph::allows(int c, int d, ChainMode mode) const {
  if (c == d) return false;
  const auto& l = link(c, d);
  return mode == ChainMode::prop3 ? (l.forward || l.reverse) : l.two_way;
}

SupportGraph build_support_graph(const PanelDataset& panel, const PropensityModel& model, int s, int t) {
  const int T = panel.n_periods();
  if (s == t || s < 0 || t < 0 || s >= T || t >= T)
    throw Error(Errc::BadPeriodPair, "invalid period pair (" + std::to_string(s) + "," + std::to_string(t) + ")");
  if (model.n_treatments() != panel.n_treatments() || model.n_periods() != T)
    throw Error(Errc::Precondition, "propensity model was fitted on a different panel layout");
  SupportGraph g;
  const int J = panel.n_treatments();
  g.n_treatments = J;
  g.s = s;
  g.t = t;
  for (Index p = 0; p < model.n_points(); ++p) {
    g.point_labels.push_back(model.points()[static_cast<std::size_t>(p)].label);
    if (model.points()[static_cast<std::size_t>(p)].weight > 0.0 && model.mover_prob(p) > 0.0) g.support.push_back(p);
  }
  const Eigen::MatrixXd counts = transition_counts(panel, s, t);
  g.links.resize(static_cast<std::size_t>(J * J));
  for (int c = 0; c < J; ++c) {
    for (int d = 0; d < J; ++d) {
      auto& l = g.links[static_cast<std::size_t>(c * J + d)];
      l.c = c;
      l.d = d;
      if (c == d) continue;
      l.movers_cd = counts(c, d);
      l.movers_dc = counts(d, c);
      l.stayers_c = counts(c, c);
      l.stayers_d = counts(d, d);
      check_condition(model, g, c, d, c, c, l.forward, l.forward_trimmed, l.forward_block);
      check_condition(model, g, d, c, d, d, l.reverse, l.reverse_trimmed, l.reverse_block);
      check_condition(model, g, c, d, d, c, l.two_way, l.two_way_trimmed, l.two_way_block);
    }
  }
  return g;
}

SupportGraph complete_support_graph(int n_treatments) {
  if (n_treatments < 2) throw Error(Errc::Precondition, "need at least two treatments");
  SupportGraph g;
  g.n_treatments = n_treatments;
  g.links.resize(static_cast<std::size_t>(n_treatments * n_treatments));
  for (int c = 0; c < n_treatments; ++c)
    for (int d = 0; d < n_treatments; ++d) {
      auto& l = g.links[static_cast<std::size_t>(c * n_treatments + d)];
      l.c = c;
      l.d = d;
      l.forward = l.reverse = l.two_way = c != d;
    }
  return g;
}

std::string Chain::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < nodes.size(); ++k) os << (k ? "," : "") << nodes[k];
  os << ')';
  return os.str();
}

namespace {

Chain annotate(const SupportGraph& graph, std::vector<int> nodes, ChainMode mode) {
  Chain ch;
  ch.mode = mode;
  ch.nodes = std::move(nodes);
  for (std::size_t m = 1; m < ch.nodes.size(); ++m) {
    const auto& l = graph.link(ch.nodes[m - 1], ch.nodes[m]);
    if (mode == ChainMode::prop4 || (l.forward && l.reverse)) {
      ch.modes.push_back(LinkMode::both);
      ch.weights.push_back(0.5);
    } else if (l.forward) {
      ch.modes.push_back(LinkMode::forward);
      ch.weights.push_back(1.0);
    } else {
      ch.modes.push_back(LinkMode::reverse);
      ch.weights.push_back(0.0);
    }
  }
  return ch;
}

}  // namespace

std::vector<Chain> enumerate_chains(const SupportGraph& graph, int target, ChainMode mode) {
  const int J = graph.n_treatments;
  if (target <= 0 || target >= J)
    throw Error(Errc::Precondition, "target treatment must lie in 1.." + std::to_string(J - 1));

  std::vector<std::vector<int>> paths;
  std::vector<int> path{0};
  std::vector<char> used(static_cast<std::size_t>(J), 0);
  used[0] = 1;
  std::function<void(int)> dfs = [&](int node) {
    if (node == target) {
      paths.push_back(path);
      return;
    }
    for (int next = 0; next < J; ++next) {
      if (used[static_cast<std::size_t>(next)] || !graph.allows(node, next, mode)) continue;
      used[static_cast<std::size_t>(next)] = 1;
      path.push_back(next);
      dfs(next);
      path.pop_back();
      used[static_cast<std::size_t>(next)] = 0;
    }
  };
  dfs(0);

  if (paths.empty()) {
    std::set<int> reach{0};
    std::vector<int> stack{0};
    while (!stack.empty()) {
      int a = stack.back();
      stack.pop_back();
      for (int b = 0; b < J; ++b)
        if (!reach.count(b) && graph.allows(a, b, mode)) {
          reach.insert(b);
          stack.push_back(b);
        }
    }
    std::ostringstream os;
    os << "treatment " << target << " is unreachable from 0 under " << to_string(mode) << "; reachable {";
    bool first = true;
    for (int r : reach) {
      os << (first ? "" : ",") << r;
      first = false;
    }
    os << "}; blocked links:";
    for (int a : reach)
      for (int b = 0; b < J; ++b)
        if (!reach.count(b)) {
          const auto& l = graph.link(a, b);
          os << ' ' << a << "->" << b << " ["
             << (mode == ChainMode::prop3 ? l.forward_block + "; " + l.reverse_block : l.two_way_block) << "]";
        }
    throw Error(Errc::NoFeasibleChain, os.str());
  }

  std::stable_sort(paths.begin(), paths.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  });
  std::vector<Chain> out;
  out.reserve(paths.size());
  for (auto& p : paths) out.push_back(annotate(graph, std::move(p), mode));
  return out;
}

Chain make_chain(const SupportGraph& graph, const std::vector<int>& nodes, ChainMode mode) {
  const int J = graph.n_treatments;
  if (nodes.size() < 2 || nodes.front() != 0)
    throw Error(Errc::InfeasibleChain, "a chain starts at treatment 0 and has at least one link");
  std::set<int> seen;
  for (int n : nodes) {
    if (n < 0 || n >= J) throw Error(Errc::InfeasibleChain, "treatment " + std::to_string(n) + " out of range");
    if (!seen.insert(n).second)
      throw Error(Errc::InfeasibleChain, "treatment " + std::to_string(n) + " repeats in the chain");
  }
  for (std::size_t m = 1; m < nodes.size(); ++m) {
    const int a = nodes[m - 1], b = nodes[m];
    if (!graph.allows(a, b, mode)) {
      const auto& l = graph.link(a, b);
      throw Error(Errc::InfeasibleChain,
                  "link " + std::to_string(a) + "->" + std::to_string(b) + " fails under " + to_string(mode) + " [" +
                      (mode == ChainMode::prop3 ? l.forward_block + "; " + l.reverse_block : l.two_way_block) + "]");
    }
  }
  return annotate(graph, nodes, mode);
}

std::uint64_t count_all_chains(int n_treatments) {
  if (n_treatments < 2) throw Error(Errc::Precondition, "count_all_chains needs J >= 2");
  const std::uint64_t n = static_cast<std::uint64_t>(n_treatments - 2);
  std::uint64_t total = 0;
  std::uint64_t fact = 1;   // k!
  std::uint64_t binom = 1;  // C(n, k)
  auto overflow = [&]() {
    return Error(Errc::Overflow, "chain count for J=" + std::to_string(n_treatments) + " exceeds 64 bits");
  };
  for (std::uint64_t k = 0; k <= n; ++k) {
    if (k > 0) {
      if (__builtin_mul_overflow(fact, k, &fact)) throw overflow();
      // C(n,k) = C(n,k-1) * (n-k+1) / k; the division is exact after the multiply.
      unsigned __int128 b = static_cast<unsigned __int128>(binom) * (n - k + 1) / k;
      if (b > UINT64_MAX) throw overflow();
      binom = static_cast<std::uint64_t>(b);
    }
    std::uint64_t term = 0;
    if (__builtin_mul_overflow(binom, binom, &term) || __builtin_mul_overflow(term, fact, &term) ||
        __builtin_add_overflow(total, term, &total))
      throw overflow();
  }
  return total;
}

std::string export_dot(const SupportGraph& graph, const std::vector<Chain>& chains) {
  const int J = graph.n_treatments;
  std::set<std::pair<int, int>> chosen;
  for (const auto& ch : chains)
    for (std::size_t m = 1; m < ch.nodes.size(); ++m) chosen.emplace(ch.nodes[m - 1], ch.nodes[m]);

  std::ostringstream os;
  os << "digraph support {\n";
  os << "  rankdir=LR;\n";
  os << "  node [shape=circle];\n";
  for (int j = 0; j < J; ++j) os << "  t" << j << " [label=\"" << j << "\"];\n";
  for (int c = 0; c < J; ++c) {
    for (int d = 0; d < J; ++d) {
      if (c == d || graph.links.empty()) continue;
      const auto& l = graph.link(c, d);
      const bool on_chain = chosen.count({c, d}) > 0;
      if (l.movers_cd <= 0.0 && !on_chain && !(l.forward && graph.support.empty() && graph.point_labels.empty()))
        continue;
      const bool feasible = l.forward || l.reverse || l.two_way;
      os << "  t" << c << " -> t" << d << " [style=" << (feasible ? "solid" : "dashed");
      if (on_chain) os << ", color=red, penwidth=2";
      if (l.movers_cd > 0.0) os << ", label=\"" << l.movers_cd << "\"";
      os << "];\n";
    }
  }
  os << "}\n";
  return os.str();
}

}  // namespace matekit
