#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's estimators.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "matekit/simlab.hpp"

namespace oracle {

// Weighted OLS through the normal equations (X'WX) b = X'Wy, solved by full-pivot LU.
inline Eigen::VectorXd ols_normal(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const Eigen::MatrixXd XtW = X.transpose() * w.asDiagonal();
  return (XtW * X).fullPivLu().solve(XtW * y);
}

// Simple paths 0 -> target in a digraph given as an adjacency matrix.
inline std::vector<std::vector<int>> dfs_paths(const std::vector<std::vector<char>>& adj, int target) {
  std::vector<std::vector<int>> out;
  std::vector<int> path{0};
  std::vector<char> on(adj.size(), 0);
  on[0] = 1;
  std::function<void(int)> go = [&](int v) {
    if (v == target) {
      out.push_back(path);
      return;
    }
    for (int u = 0; u < static_cast<int>(adj.size()); ++u) {
      if (!adj[v][u] || on[u]) continue;
      on[u] = 1;
      path.push_back(u);
      go(u);
      path.pop_back();
      on[u] = 0;
    }
  };
  go(0);
  return out;
}

inline std::vector<std::vector<char>> complete_adjacency(int J) {
  std::vector<std::vector<char>> a(J, std::vector<char>(J, 1));
  for (int j = 0; j < J; ++j) a[j][j] = 0;
  return a;
}

// Little-endian base-1e9 unsigned big integer, enough for exact combinatorics.
struct BigUint {
  std::vector<std::uint32_t> d{0};

  static BigUint of(std::uint64_t v) {
    BigUint b;
    b.d.clear();
    do {
      b.d.push_back(static_cast<std::uint32_t>(v % 1000000000u));
      v /= 1000000000u;
    } while (v);
    return b;
  }
  BigUint& mul(std::uint32_t m) {
    std::uint64_t carry = 0;
    for (auto& x : d) {
      const std::uint64_t cur = static_cast<std::uint64_t>(x) * m + carry;
      x = static_cast<std::uint32_t>(cur % 1000000000u);
      carry = cur / 1000000000u;
    }
    while (carry) {
      d.push_back(static_cast<std::uint32_t>(carry % 1000000000u));
      carry /= 1000000000u;
    }
    return *this;
  }
  BigUint& div(std::uint32_t m) {
    std::uint64_t rem = 0;
    for (auto it = d.rbegin(); it != d.rend(); ++it) {
      const std::uint64_t cur = *it + rem * 1000000000u;
      *it = static_cast<std::uint32_t>(cur / m);
      rem = cur % m;
    }
    while (d.size() > 1 && d.back() == 0) d.pop_back();
    return *this;
  }
  BigUint& add(const BigUint& o) {
    std::uint64_t carry = 0;
    for (std::size_t i = 0; i < std::max(d.size(), o.d.size()) || carry; ++i) {
      if (i == d.size()) d.push_back(0);
      const std::uint64_t cur = d[i] + carry + (i < o.d.size() ? o.d[i] : 0u);
      d[i] = static_cast<std::uint32_t>(cur % 1000000000u);
      carry = cur / 1000000000u;
    }
    return *this;
  }
  std::string str() const {
    std::string s = std::to_string(d.back());
    for (auto it = d.rbegin() + 1; it != d.rend(); ++it) {
      std::string part = std::to_string(*it);
      s += std::string(9 - part.size(), '0') + part;
    }
    return s;
  }
  bool fits_u64() const {
    static const std::string max = "18446744073709551615";
    const auto s = str();
    return s.size() < max.size() || (s.size() == max.size() && s <= max);
  }
};

// sum_{k=0}^{J-2} k! C(J-2, k)^2, term by term with exact arithmetic.
inline BigUint chain_count_formula(int J) {
  BigUint total = BigUint::of(0);
  const int n = J - 2;
  for (int k = 0; k <= n; ++k) {
    BigUint term = BigUint::of(1);
    for (int i = 2; i <= k; ++i) term.mul(static_cast<std::uint32_t>(i));
    for (int rep = 0; rep < 2; ++rep) {
      BigUint c = BigUint::of(1);
      for (int i = 1; i <= k; ++i) c.mul(static_cast<std::uint32_t>(n - k + i)).div(static_cast<std::uint32_t>(i));
      // multiply term by c (c small enough to go limb by limb only for modest J)
      BigUint prod = BigUint::of(0);
      for (std::size_t limb = 0; limb < c.d.size(); ++limb) {
        BigUint part = term;
        part.mul(c.d[limb]);
        for (std::size_t z = 0; z < limb; ++z) part.d.insert(part.d.begin(), 0);
        prod.add(part);
      }
      term = prod;
    }
    total.add(term);
  }
  return total;
}

struct DotGraph {
  std::set<int> nodes;
  std::map<std::pair<int, int>, std::string> edges;  // attribute text
};

// Minimal reader for the subset of DOT the exporter writes.
inline DotGraph parse_dot(const std::string& text) {
  DotGraph g;
  std::regex node_re(R"(t(\d+)\s*\[label)");
  std::regex edge_re(R"(t(\d+)\s*->\s*t(\d+)\s*(\[([^\]]*)\])?)");
  for (std::sregex_iterator it(text.begin(), text.end(), node_re), end; it != end; ++it)
    g.nodes.insert(std::stoi((*it)[1]));
  for (std::sregex_iterator it(text.begin(), text.end(), edge_re), end; it != end; ++it)
    g.edges[{std::stoi((*it)[1]), std::stoi((*it)[2])}] = (*it)[4];
  return g;
}

// Population quantities computed straight from oracle cells.
struct Population {
  const matekit::PopulationOracle& o;

  double prob(std::function<bool(const matekit::PopulationOracle::Cell&)> pred) const {
    double p = 0.0;
    for (const auto& c : o.cells())
      if (pred(c)) p += c.prob;
    return p;
  }
  // E[Y_b - Y_a | J_a = c, J_b = d, x]
  std::optional<double> growth(int a, int b, int c, int d, std::size_t x) const {
    double num = 0.0, den = 0.0;
    for (const auto& cell : o.cells())
      if (cell.x == x && cell.path[a] == c && cell.path[b] == d) {
        num += cell.prob * (cell.y(b) - cell.y(a));
        den += cell.prob;
      }
    if (den <= 0.0) return std::nullopt;
    return num / den;
  }
  double mover_prob_x(std::size_t x) const {
    return prob([&](const auto& c) { return c.x == x && c.mover; });
  }
  double mover_prob() const {
    return prob([](const auto& c) { return c.mover; });
  }
  // Sum over x of P(x | mover) f(x), skipping x without movers.
  template <typename F>
  double over_movers(F f) const {
    double total = 0.0;
    const double pm = mover_prob();
    for (std::size_t x = 0; x < o.spec().covariates.size(); ++x) {
      const double px = mover_prob_x(x);
      if (px > 0.0) total += px / pm * f(x);
    }
    return total;
  }
  // Movers c->d against stayers at c, outcome growth from s to t, at x.
  // For t < s this is the reverse comparison, both groups sharing J_s = c.
  double rho(int c, int d, int s, int t, std::size_t x) const {
    const int lo = std::min(s, t), hi = std::max(s, t);
    auto in = [&](int jt) {
      return s < t ? growth(lo, hi, c, jt, x) : growth(lo, hi, jt, c, x);
    };
    const double sign = s < t ? 1.0 : -1.0;
    return sign * (in(d).value() - in(c).value());
  }
  // Chain formula with link weights w: forward movers-vs-stayers at the
  // origin, reverse stayers-at-destination against movers back.
  double prop3(const std::vector<int>& nodes, const std::vector<double>& w, int s, int t) const {
    return over_movers([&](std::size_t x) {
      double v = 0.0;
      for (std::size_t m = 0; m + 1 < nodes.size(); ++m) {
        const int a = nodes[m], b = nodes[m + 1];
        if (w[m] != 0.0) v += w[m] * rho(a, b, s, t, x);
        if (w[m] != 1.0) v += (1.0 - w[m]) * -rho(b, a, s, t, x);
      }
      return v;
    });
  }
  // Half the growth gap between movers a->b and movers b->a, summed along the chain.
  double prop4(const std::vector<int>& nodes, int s, int t) const {
    return over_movers([&](std::size_t x) {
      double v = 0.0;
      for (std::size_t m = 0; m + 1 < nodes.size(); ++m) {
        const int a = nodes[m], b = nodes[m + 1];
        v += 0.5 * (growth(s, t, a, b, x).value() - growth(s, t, b, a, x).value());
      }
      return v;
    });
  }
};

}  // namespace oracle
