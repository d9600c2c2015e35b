#pragma once

// R-vine structures as tree-edge lists.
//
// An edge (a, b | C) carries two conditioned variables and a conditioning
// set; its support is {a, b} U C. Variables are arbitrary non-negative
// integer labels. A node at level t >= 2 is an edge of level t - 1, and an
// edge (a, b | C) at level t attaches to the level t - 1 edges that provide
// the conditional margins of a given C and of b given C. Those are found
// through the key (conditioned variable, rest of support), see NodeKey.

#include <algorithm>
#include <compare>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vinebc/core.hpp"

namespace vinebc {

struct Edge {
  int a = 0;
  int b = 0;
  std::vector<int> cond;  // sorted
  bool bridge = false;    // added by a merge; not part of identity

  Edge() = default;
  Edge(int x, int y, std::vector<int> c = {}, bool is_bridge = false)
      : a(std::min(x, y)), b(std::max(x, y)), cond(std::move(c)), bridge(is_bridge) {
    std::sort(cond.begin(), cond.end());
  }

  std::size_t level() const { return cond.size() + 1; }

  friend bool operator==(const Edge& l, const Edge& r) {
    return l.a == r.a && l.b == r.b && l.cond == r.cond;
  }
  friend bool operator<(const Edge& l, const Edge& r) {
    return std::tie(l.a, l.b, l.cond) < std::tie(r.a, r.b, r.cond);
  }
};

inline std::string to_string(const Edge& e) {
  std::ostringstream os;
  os << "(" << e.a << "," << e.b;
  if (!e.cond.empty()) {
    os << "|";
    for (std::size_t i = 0; i < e.cond.size(); ++i) os << (i ? "," : "") << e.cond[i];
  }
  os << ")";
  return os.str();
}

/// V(e) = {a, b} U C as a sorted vector.
inline std::vector<int> edge_support(const Edge& e) {
  std::vector<int> s = e.cond;
  s.insert(std::lower_bound(s.begin(), s.end(), e.a), e.a);
  s.insert(std::lower_bound(s.begin(), s.end(), e.b), e.b);
  return s;
}

/// Conditional margin "variable given set", the unit the h-function
/// recursion moves between levels.
struct NodeKey {
  int var = 0;
  std::vector<int> given;  // sorted

  friend bool operator<(const NodeKey& l, const NodeKey& r) {
    return std::tie(l.var, l.given) < std::tie(r.var, r.given);
  }
  friend bool operator==(const NodeKey&, const NodeKey&) = default;
};

inline std::vector<int> with_element(std::vector<int> s, int x) {
  s.insert(std::lower_bound(s.begin(), s.end(), x), x);
  return s;
}

/// Margins an edge consumes: (a | C) and (b | C).
inline NodeKey input_key_a(const Edge& e) { return {e.a, e.cond}; }
inline NodeKey input_key_b(const Edge& e) { return {e.b, e.cond}; }
/// Margins an edge produces: (a | C u b) and (b | C u a).
inline NodeKey output_key_a(const Edge& e) { return {e.a, with_element(e.cond, e.b)}; }
inline NodeKey output_key_b(const Edge& e) { return {e.b, with_element(e.cond, e.a)}; }

struct VineStructure {
  std::vector<int> variables;            // sorted labels
  int truncation = 0;                    // number of levels present
  std::vector<std::vector<Edge>> levels; // levels[t - 1] holds E_t

  std::size_t dimension() const { return variables.size(); }
  const std::vector<Edge>& level(int t) const { return levels.at(static_cast<std::size_t>(t - 1)); }
};

// ---------------------------------------------------------------- DSU

/// Disjoint-set union over dense node ids, union by rank with path
/// compression.
/// D-vine (path) structure over the given variable order, truncated at
/// `truncation` levels (-1 for all).
inline VineStructure d_vine(const std::vector<int>& order, int truncation = -1) {
  VineStructure v;
  v.variables = order;
  std::sort(v.variables.begin(), v.variables.end());
  const int d = static_cast<int>(order.size());
  v.truncation = truncation < 0 ? std::max(0, d - 1) : std::min(truncation, std::max(0, d - 1));
  for (int t = 1; t <= v.truncation; ++t) {
    std::vector<Edge> level;
    for (int k = 0; k + t < d; ++k)
      level.emplace_back(order[k], order[k + t], std::vector<int>(order.begin() + k + 1, order.begin() + k + t));
    v.levels.push_back(std::move(level));
  }
  return v;
}

class DisjointSetUnion {
 public:
  enum class UnionResult { merged, already_same };

  explicit DisjointSetUnion(std::size_t n = 0) : parent_(n), rank_(n, 0), components_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }

  std::size_t size() const { return parent_.size(); }
  std::size_t components() const { return components_; }

  std::size_t find(std::size_t x) {
    check(x);
    std::size_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      const std::size_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }

  UnionResult unite(std::size_t a, std::size_t b) {
    std::size_t ra = find(a), rb = find(b);
    if (ra == rb) return UnionResult::already_same;
    if (rank_[ra] < rank_[rb]) std::swap(ra, rb);
    parent_[rb] = ra;
    if (rank_[ra] == rank_[rb]) ++rank_[ra];
    --components_;
    return UnionResult::merged;
  }

  bool same(std::size_t a, std::size_t b) { return find(a) == find(b); }

 private:
  void check(std::size_t x) const {
    if (x >= parent_.size())
      throw std::out_of_range("DisjointSetUnion: unknown node " + std::to_string(x));
  }

  std::vector<std::size_t> parent_;
  std::vector<unsigned> rank_;
  std::size_t components_;
};

// ---------------------------------------------------------------- validation

struct Violation {
  int level = 0;
  std::optional<Edge> edge;
  std::string what;
};

inline std::string to_string(const Violation& v) {
  std::string s = "level " + std::to_string(v.level) + ": " + v.what;
  if (v.edge) s += " " + to_string(*v.edge);
  return s;
}

/// For each edge, the indices of its two endpoint nodes in the previous
/// level (positions in `variables` at level 1).
using Endpoints = std::vector<std::vector<std::pair<std::size_t, std::size_t>>>;

namespace detail {

inline std::map<NodeKey, std::size_t> key_index_for_level(const VineStructure& v, int t,
                                                          std::vector<Violation>* out) {
  std::map<NodeKey, std::size_t> idx;
  if (t == 1) {
    for (std::size_t i = 0; i < v.variables.size(); ++i) idx[{v.variables[i], {}}] = i;
    return idx;
  }
  const auto& prev = v.level(t - 1);
  for (std::size_t i = 0; i < prev.size(); ++i) {
    for (const NodeKey& k : {output_key_a(prev[i]), output_key_b(prev[i])}) {
      if (!idx.emplace(k, i).second && out)
        out->push_back({t - 1, prev[i], "duplicate conditional margin produced"});
    }
  }
  return idx;
}

}  // namespace detail

/// Checks the R-vine conditions level by level and returns every violation
/// found (empty when the structure is valid).
inline std::vector<Violation> validate(const VineStructure& v) {
  std::vector<Violation> out;
  const int d = static_cast<int>(v.variables.size());
  if (d == 0) {
    out.push_back({0, std::nullopt, "no variables"});
    return out;
  }
  if (!std::is_sorted(v.variables.begin(), v.variables.end()) ||
      std::adjacent_find(v.variables.begin(), v.variables.end()) != v.variables.end())
    out.push_back({0, std::nullopt, "variable labels must be sorted and unique"});
  if (v.truncation < 0 || v.truncation > std::max(0, d - 1))
    out.push_back({0, std::nullopt, "truncation level out of range"});
  if (static_cast<int>(v.levels.size()) != v.truncation)
    out.push_back({0, std::nullopt, "number of levels differs from truncation"});
  if (!out.empty()) return out;

  auto known = [&](int x) { return std::binary_search(v.variables.begin(), v.variables.end(), x); };

  // endpoints of the previous level's edges, for the proximity check
  std::vector<std::pair<std::size_t, std::size_t>> prev_ends;
  for (int t = 1; t <= v.truncation; ++t) {
    const auto& edges = v.level(t);
    const std::size_t nodes = static_cast<std::size_t>(d - t + 1);
    bool level_ok = true;
    if (edges.size() != nodes - 1) {
      out.push_back({t, std::nullopt,
                     "expected " + std::to_string(nodes - 1) + " edges, found " +
                         std::to_string(edges.size())});
      level_ok = false;
    }
    const auto keys = detail::key_index_for_level(v, t, &out);
    DisjointSetUnion dsu(nodes);
    std::vector<std::pair<std::size_t, std::size_t>> ends;
    for (const Edge& e : edges) {
      if (e.a == e.b || !known(e.a) || !known(e.b) ||
          std::binary_search(e.cond.begin(), e.cond.end(), e.a) ||
          std::binary_search(e.cond.begin(), e.cond.end(), e.b) ||
          std::adjacent_find(e.cond.begin(), e.cond.end()) != e.cond.end() ||
          !std::all_of(e.cond.begin(), e.cond.end(), known)) {
        out.push_back({t, e, "malformed edge"});
        level_ok = false;
        continue;
      }
      if (static_cast<int>(e.cond.size()) != t - 1) {
        out.push_back({t, e, "conditioning set has wrong size"});
        level_ok = false;
        continue;
      }
      const auto ia = keys.find(input_key_a(e));
      const auto ib = keys.find(input_key_b(e));
      if (ia == keys.end() || ib == keys.end()) {
        out.push_back({t, e, "endpoints are not nodes of this level (proximity)"});
        level_ok = false;
        continue;
      }
      const std::size_t n1 = ia->second, n2 = ib->second;
      if (t >= 2) {
        const auto [p1, q1] = prev_ends[n1];
        const auto [p2, q2] = prev_ends[n2];
        if (!(p1 == p2 || p1 == q2 || q1 == p2 || q1 == q2)) {
          out.push_back({t, e, "endpoint edges share no node (proximity)"});
          level_ok = false;
        }
      }
      if (dsu.unite(n1, n2) == DisjointSetUnion::UnionResult::already_same) {
        out.push_back({t, e, "edge closes a cycle; level is not a spanning tree"});
        level_ok = false;
      }
      ends.emplace_back(n1, n2);
    }
    if (level_ok && dsu.components() != 1)
      out.push_back({t, std::nullopt, "level is not connected"});
    if (!level_ok || ends.size() != edges.size()) {
      // later levels cannot be checked meaningfully
      return out;
    }
    prev_ends = std::move(ends);
  }
  return out;
}

/// Endpoint indices for every edge; throws DataError on an invalid
/// structure.
inline Endpoints resolve_endpoints(const VineStructure& v) {
  const auto violations = validate(v);
  if (!violations.empty()) throw DataError("invalid vine structure: " + to_string(violations.front()));
  Endpoints out;
  for (int t = 1; t <= v.truncation; ++t) {
    const auto keys = detail::key_index_for_level(v, t, nullptr);
    std::vector<std::pair<std::size_t, std::size_t>> ends;
    for (const Edge& e : v.level(t)) ends.emplace_back(keys.at(input_key_a(e)), keys.at(input_key_b(e)));
    out.push_back(std::move(ends));
  }
  return out;
}

// ---------------------------------------------------------------- file format
//
//   # free comment
//   #variables,1;2;3;4;5
//   #truncation,4
//   1,1,2,
//   2,1,3,2
//   1,3,4,,bridge
//
// One line per edge: level, a, b, conditioning set separated by ';', and an
// optional `bridge` flag. Levels ascend.

namespace detail {

inline int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(trim(s), &pos);
    if (pos != trim(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " '" + s + "'");
  }
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
  std::vector<int> out;
  const std::string t = trim(s);
  if (t.empty()) return out;
  for (const auto& part : split(t, ';')) out.push_back(parse_int(part, what));
  return out;
}

inline std::string join_ints(const std::vector<int>& v, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace detail

inline void write_edge_fields(std::ostream& os, int level, const Edge& e) {
  os << level << ',' << e.a << ',' << e.b << ',' << detail::join_ints(e.cond);
}

inline void write_structure(std::ostream& os, const VineStructure& v) {
  os << "#variables," << detail::join_ints(v.variables) << '\n';
  os << "#truncation," << v.truncation << '\n';
  for (int t = 1; t <= v.truncation; ++t) {
    for (const Edge& e : v.level(t)) {
      write_edge_fields(os, t, e);
      if (e.bridge) os << ",bridge";
      os << '\n';
    }
  }
}

/// Parses the structure format. Without a `#variables` header the variable
/// set is the union of level-1 supports; without `#truncation` it is the
/// highest level present.
inline VineStructure read_structure(std::istream& is) {
  VineStructure v;
  std::optional<std::vector<int>> vars;
  std::optional<int> trunc;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<int, Edge>> edges;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto f = detail::split(line.substr(1), ',');
      if (f.size() == 2 && detail::trim(f[0]) == "variables") vars = detail::parse_int_list(f[1], "variable");
      else if (f.size() == 2 && detail::trim(f[0]) == "truncation") trunc = detail::parse_int(f[1], "truncation");
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 4 && f.size() != 5)
      throw DataError("structure line " + std::to_string(lineno) + ": expected level,a,b,C[,bridge]");
    const int level = detail::parse_int(f[0], "level");
    Edge e(detail::parse_int(f[1], "variable"), detail::parse_int(f[2], "variable"),
           detail::parse_int_list(f[3], "conditioning variable"));
    if (f.size() == 5) {
      if (detail::trim(f[4]) != "bridge")
        throw DataError("structure line " + std::to_string(lineno) + ": unknown flag '" + f[4] + "'");
      e.bridge = true;
    }
    if (level < 1) throw DataError("structure line " + std::to_string(lineno) + ": level must be >= 1");
    if (!edges.empty() && level < edges.back().first)
      throw DataError("structure line " + std::to_string(lineno) + ": levels must ascend");
    edges.emplace_back(level, std::move(e));
  }
  int top = 0;
  for (const auto& [l, e] : edges) top = std::max(top, l);
  v.truncation = trunc.value_or(top);
  if (top > v.truncation) throw DataError("structure has edges above its truncation level");
  v.levels.assign(static_cast<std::size_t>(v.truncation), {});
  std::vector<int> support_vars;
  for (auto& [l, e] : edges) {
    if (l == 1) {
      support_vars.push_back(e.a);
      support_vars.push_back(e.b);
    }
    v.levels[static_cast<std::size_t>(l - 1)].push_back(std::move(e));
  }
  v.variables = vars.value_or(support_vars);
  std::sort(v.variables.begin(), v.variables.end());
  v.variables.erase(std::unique(v.variables.begin(), v.variables.end()), v.variables.end());
  return v;
}

}  // namespace vinebc
