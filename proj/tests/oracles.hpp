#pragma once

// Reference implementations used only by the tests. They are written
// independently of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "vinebc/pair_copula.hpp"
#include "vinebc/vine_structure.hpp"

namespace oracle {

inline double kendall_tau_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  long long conc = 0, disc = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) { ++tx; continue; }
      if (dy == 0) { ++ty; continue; }
      (dx * dy > 0 ? conc : disc)++;
    }
  }
  const double den = std::sqrt(double(conc + disc + tx) * double(conc + disc + ty));
  return den > 0 ? double(conc - disc) / den : 0.0;
}

inline double phi_inv(double p) {
  static const boost::math::normal_distribution<> n;
  return boost::math::quantile(n, p);
}

// Bivariate normal CDF by Plackett's identity
// Phi2(x, y; rho) = Phi(x) Phi(y) + int_0^rho phi2(x, y; r) dr.
inline double bvn_cdf(double x, double y, double rho) {
  static const boost::math::normal_distribution<> n;
  auto phi2 = [&](double r) {
    const double q = 1.0 - r * r;
    return std::exp(-(x * x - 2.0 * r * x * y + y * y) / (2.0 * q)) / (2.0 * M_PI * std::sqrt(q));
  };
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(phi2, 0.0, rho, 15, 1e-14);
  return boost::math::cdf(n, x) * boost::math::cdf(n, y) + integral;
}

/// Unrotated copula CDFs.
inline double base_cdf(vinebc::Family f, double th, double u, double v) {
  using vinebc::Family;
  switch (f) {
    case Family::independence: return u * v;
    case Family::gaussian: return bvn_cdf(phi_inv(u), phi_inv(v), th);
    case Family::clayton: return std::pow(std::pow(u, -th) + std::pow(v, -th) - 1.0, -1.0 / th);
    case Family::gumbel: {
      const double s = std::pow(-std::log(u), th) + std::pow(-std::log(v), th);
      return std::exp(-std::pow(s, 1.0 / th));
    }
    case Family::frank:
      return -std::log1p(std::expm1(-th * u) * std::expm1(-th * v) / std::expm1(-th)) / th;
  }
  return 0.0;
}

inline double cdf(const vinebc::PairCopulaSpec& s, double u, double v) {
  const double th = s.parameter;
  switch (s.rotation) {
    case 90: return v - base_cdf(s.family, th, 1.0 - u, v);
    case 180: return u + v - 1.0 + base_cdf(s.family, th, 1.0 - u, 1.0 - v);
    case 270: return u - base_cdf(s.family, th, u, 1.0 - v);
    default: return base_cdf(s.family, th, u, v);
  }
}

inline double bisect(const std::function<double(double)>& f, double target, double lo = 0.0, double hi = 1.0) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Random R-vine structure on variables `vars`: each level is a uniformly
/// weighted random spanning tree over the pairs allowed by proximity (Prim).
inline vinebc::VineStructure random_rvine(const std::vector<int>& vars, int truncation, std::mt19937_64& gen) {
  using vinebc::Edge;
  vinebc::VineStructure vs;
  vs.variables = vars;
  std::sort(vs.variables.begin(), vs.variables.end());
  vs.truncation = truncation;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // nodes: supports, and for level >= 2 the pair of previous-node indices
  std::vector<std::set<int>> supports;
  for (int v : vs.variables) supports.push_back({v});
  std::vector<std::pair<int, int>> ends;
  for (int t = 1; t <= truncation; ++t) {
    const int n = static_cast<int>(supports.size());
    std::vector<std::vector<double>> w(n, std::vector<double>(n, -1.0));
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        bool ok = t == 1;
        if (!ok) ok = ends[i].first == ends[j].first || ends[i].first == ends[j].second ||
                      ends[i].second == ends[j].first || ends[i].second == ends[j].second;
        if (ok) w[i][j] = w[j][i] = unif(gen);
      }
    }
    std::vector<bool> in(n, false);
    in[0] = true;
    std::vector<std::pair<int, int>> tree;
    for (int k = 1; k < n; ++k) {
      double best = -1;
      std::pair<int, int> arg{-1, -1};
      for (int i = 0; i < n; ++i)
        if (in[i])
          for (int j = 0; j < n; ++j)
            if (!in[j] && w[i][j] > best) best = w[i][j], arg = {i, j};
      in[arg.second] = true;
      tree.push_back(arg);
    }
    struct Node {
      Edge e;
      std::set<int> support;
      std::pair<int, int> ends;
    };
    std::vector<Node> made;
    for (auto [i, j] : tree) {
      std::vector<int> S;
      std::set_intersection(supports[i].begin(), supports[i].end(), supports[j].begin(), supports[j].end(),
                            std::back_inserter(S));
      int a = 0, b = 0;
      for (int x : supports[i])
        if (!supports[j].count(x)) a = x;
      for (int x : supports[j])
        if (!supports[i].count(x)) b = x;
      std::set<int> sup = supports[i];
      sup.insert(supports[j].begin(), supports[j].end());
      made.push_back({Edge(a, b, S), sup, {i, j}});
    }
    std::sort(made.begin(), made.end(), [](const Node& l, const Node& r) { return l.e < r.e; });
    std::vector<Edge> level;
    supports.clear();
    ends.clear();
    for (auto& m : made) {
      level.push_back(m.e);
      supports.push_back(m.support);
      ends.push_back(m.ends);
    }
    vs.levels.push_back(std::move(level));
  }
  return vs;
}

/// Random parameter for a family with Kendall tau drawn in [-0.7, 0.7].
inline vinebc::PairCopulaSpec random_spec(std::mt19937_64& gen) {
  using vinebc::Family;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Family fams[] = {Family::independence, Family::gaussian, Family::clayton, Family::gumbel, Family::frank};
  const Family f = fams[std::uniform_int_distribution<int>(0, 4)(gen)];
  if (f == Family::independence) return {};
  double tau = 0.05 + 0.65 * unif(gen);
  const bool neg = unif(gen) < 0.5;
  if (f == Family::gaussian) {
    tau = neg ? -tau : tau;
    return vinebc::PairCopulaSpec::gaussian(std::sin(M_PI * tau / 2.0));
  }
  if (f == Family::clayton) {
    const int rots[] = {0, 180, 90, 270};
    const int r = rots[(neg ? 2 : 0) + (unif(gen) < 0.5 ? 1 : 0)];
    return vinebc::PairCopulaSpec::clayton(2.0 * tau / (1.0 - tau), r);
  }
  if (f == Family::gumbel) {
    const int rots[] = {0, 180, 90, 270};
    const int r = rots[(neg ? 2 : 0) + (unif(gen) < 0.5 ? 1 : 0)];
    return vinebc::PairCopulaSpec::gumbel(1.0 / (1.0 - tau), r);
  }
  // frank: any nonzero parameter in a moderate range
  const double th = 0.5 + 10.0 * unif(gen);
  return vinebc::PairCopulaSpec::frank(neg ? -th : th);
}

/// Every R-vine on `vars` truncated at T that contains the edges of `fixed`
/// at their levels. Brute force over edge subsets; proximity is checked as
/// "endpoint edges share a node", and trees by graph search.
using LevelSets = std::vector<std::vector<vinebc::Edge>>;

inline std::set<LevelSets> enumerate_vines(const std::vector<int>& vars, int T, const LevelSets& fixed) {
  using vinebc::Edge;
  struct Node {
    std::set<int> support;
    std::pair<int, int> ends{-1, -1};
  };
  std::set<LevelSets> out;
  LevelSets current;
  std::function<void(int, const std::vector<Node>&)> rec = [&](int t, const std::vector<Node>& nodes) {
    if (t > T) {
      LevelSets c = current;
      for (auto& l : c) std::sort(l.begin(), l.end());
      out.insert(c);
      return;
    }
    const int n = static_cast<int>(nodes.size());
    struct Pair {
      int i, j;
      Edge e;
    };
    std::vector<Pair> allowed;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (t >= 2) {
          const auto [p, q] = nodes[i].ends;
          const auto [r, s] = nodes[j].ends;
          if (p != r && p != s && q != r && q != s) continue;
        }
        std::vector<int> S;
        std::set_intersection(nodes[i].support.begin(), nodes[i].support.end(), nodes[j].support.begin(),
                              nodes[j].support.end(), std::back_inserter(S));
        int a = 0, b = 0;
        for (int x : nodes[i].support)
          if (!nodes[j].support.count(x)) a = x;
        for (int x : nodes[j].support)
          if (!nodes[i].support.count(x)) b = x;
        allowed.push_back({i, j, Edge(a, b, S)});
      }
    }
    const auto& must = t <= static_cast<int>(fixed.size()) ? fixed[static_cast<std::size_t>(t - 1)] : std::vector<Edge>{};
    std::vector<int> forced, free;
    for (int k = 0; k < static_cast<int>(allowed.size()); ++k) {
      if (std::find(must.begin(), must.end(), allowed[k].e) != must.end())
        forced.push_back(k);
      else
        free.push_back(k);
    }
    if (forced.size() != must.size()) return;
    const int need = n - 1 - static_cast<int>(forced.size());
    if (need < 0) return;
    std::vector<int> pick;
    std::function<void(std::size_t)> choose = [&](std::size_t from) {
      if (static_cast<int>(pick.size()) == need) {
        std::vector<int> chosen = forced;
        chosen.insert(chosen.end(), pick.begin(), pick.end());
        std::vector<std::vector<int>> adj(n);
        for (int k : chosen) {
          adj[allowed[k].i].push_back(allowed[k].j);
          adj[allowed[k].j].push_back(allowed[k].i);
        }
        std::vector<bool> seen(n, false);
        std::vector<int> stack{0};
        seen[0] = true;
        int count = 1;
        while (!stack.empty()) {
          const int x = stack.back();
          stack.pop_back();
          for (int y : adj[x])
            if (!seen[y]) seen[y] = true, ++count, stack.push_back(y);
        }
        if (count != n) return;
        std::vector<Node> next;
        std::vector<Edge> level;
        for (int k : chosen) {
          Node nd;
          nd.support = nodes[allowed[k].i].support;
          nd.support.insert(nodes[allowed[k].j].support.begin(), nodes[allowed[k].j].support.end());
          nd.ends = {allowed[k].i, allowed[k].j};
          next.push_back(nd);
          level.push_back(allowed[k].e);
        }
        current.push_back(level);
        rec(t + 1, next);
        current.pop_back();
        return;
      }
      for (std::size_t k = from; k < free.size(); ++k) {
        pick.push_back(free[k]);
        choose(k + 1);
        pick.pop_back();
      }
    };
    choose(0);
  };
  std::vector<Node> level0;
  for (int v : vars) level0.push_back({{v}, {-1, -1}});
  rec(1, level0);
  return out;
}

}  // namespace oracle
