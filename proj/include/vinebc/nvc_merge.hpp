#pragma once

// Nested vine copulas: merging vine structures over disjoint variable sets
// into a single R-vine by level-wise completion with bridging edges.
//
// Level t of the merged vine starts from the union of the inputs' level-t
// edges. If that is not yet a spanning tree over the level's nodes, bridging
// candidates (node pairs whose supports differ in one variable each) are
// added greedily in policy order, skipping any that would close a cycle.

#include <algorithm>
#include <chrono>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "vinebc/core.hpp"
#include "vinebc/pair_copula.hpp"
#include "vinebc/stats.hpp"
#include "vinebc/vine_model.hpp"
#include "vinebc/vine_structure.hpp"

namespace vinebc {

struct BridgeCandidate {
  std::size_t node_u = 0, node_v = 0;
  Edge edge;  // (a, b | S), S = V(u) n V(v)
};

/// Nodes of one level with the DSU seeded by the level's existing edges.
struct LevelNodes {
  std::vector<std::vector<int>> supports;
  std::vector<bool> from_bridge;  // node is a bridging edge of the previous level
  std::map<NodeKey, std::size_t> key_index;
  DisjointSetUnion dsu;
};

/// Union of the inputs' level-wise edge lists. The result has the union of
/// the variable sets and truncation max T_i; it is generally incomplete.
inline VineStructure concat_levels(const std::vector<VineStructure>& vines) {
  if (vines.size() < 2) throw DataError("merge needs at least two vines");
  VineStructure out;
  std::set<int> seen;
  for (const auto& v : vines) {
    for (int x : v.variables) {
      if (!seen.insert(x).second)
        throw DataError("vines to merge share variable " + std::to_string(x) + "; relabel them first");
    }
    out.truncation = std::max(out.truncation, v.truncation);
  }
  out.variables.assign(seen.begin(), seen.end());
  out.levels.assign(static_cast<std::size_t>(out.truncation), {});
  for (const auto& v : vines) {
    for (int t = 1; t <= v.truncation; ++t) {
      auto& dst = out.levels[static_cast<std::size_t>(t - 1)];
      dst.insert(dst.end(), v.level(t).begin(), v.level(t).end());
    }
  }
  return out;
}

/// Level-t nodes (variables at t = 1, edges of E_prev otherwise) and a DSU
/// with the endpoints of every edge of E_t united. Fails on a cycle in E_t
/// or an edge whose endpoints are not nodes of the level.
inline LevelNodes reconstruct_and_init_dsu(int t, const std::vector<int>& variables, const std::vector<Edge>& E_prev,
                                           const std::vector<Edge>& E_t) {
  LevelNodes ln;
  if (t == 1) {
    for (int v : variables) {
      ln.key_index[{v, {}}] = ln.supports.size();
      ln.supports.push_back({v});
      ln.from_bridge.push_back(false);
    }
  } else {
    if (E_prev.empty()) throw DataError("level " + std::to_string(t) + " has no nodes");
    for (const Edge& e : E_prev) {
      const std::size_t id = ln.supports.size();
      for (const NodeKey& k : {output_key_a(e), output_key_b(e)}) {
        if (!ln.key_index.emplace(k, id).second)
          throw DataError("level " + std::to_string(t - 1) + " repeats a conditional margin at " + to_string(e));
      }
      ln.supports.push_back(edge_support(e));
      ln.from_bridge.push_back(e.bridge);
    }
  }
  ln.dsu = DisjointSetUnion(ln.supports.size());
  for (const Edge& e : E_t) {
    const auto ia = ln.key_index.find(input_key_a(e));
    const auto ib = ln.key_index.find(input_key_b(e));
    if (ia == ln.key_index.end() || ib == ln.key_index.end())
      throw DataError("level " + std::to_string(t) + ": endpoints of " + to_string(e) + " are not nodes");
    if (ln.dsu.unite(ia->second, ib->second) == DisjointSetUnion::UnionResult::already_same)
      throw DataError("level " + std::to_string(t) + ": cycle detected at " + to_string(e));
  }
  return ln;
}

/// Unordered node pairs, in node-index order, whose supports differ in
/// exactly one variable each and which are not yet connected at this level.
/// With `strict_lemma`, one endpoint must come from a bridging edge.
inline std::vector<BridgeCandidate> build_candidates(LevelNodes& nodes, bool strict_lemma = false) {
  std::vector<BridgeCandidate> out;
  const std::size_t n = nodes.supports.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (strict_lemma && !nodes.from_bridge[i] && !nodes.from_bridge[j]) continue;
      if (nodes.dsu.same(i, j)) continue;
      auto e = detail::join_supports(nodes.supports[i], nodes.supports[j]);
      if (!e) continue;
      e->bridge = true;
      out.push_back({i, j, std::move(*e)});
    }
  }
  return out;
}

/// Appends candidates in order until E_t has `target` edges, skipping those
/// whose endpoints are already connected. Returns the skipped candidates.
inline std::vector<Edge> greedy_augment(std::vector<Edge>& E_t, const std::vector<BridgeCandidate>& ordered,
                                        DisjointSetUnion& dsu, std::size_t target) {
  std::vector<Edge> skipped;
  for (const auto& c : ordered) {
    if (E_t.size() >= target) break;
    if (dsu.unite(c.node_u, c.node_v) == DisjointSetUnion::UnionResult::already_same) {
      skipped.push_back(c.edge);
      continue;
    }
    E_t.push_back(c.edge);
  }
  return skipped;
}

/// Scores bridging candidates by |Kendall tau| of their conditional
/// pseudo-observations. Copulas of completed levels are taken from `preset`
/// or fitted, then propagated so the next level can be scored.
class TauCriterion {
 public:
  TauCriterion(const Matrix& U, const std::vector<int>& variables, FitPairOptions pair = {},
               std::map<Edge, PairCopulaSpec> preset = {}, unsigned threads = 1)
      : po_(U, variables), pair_(std::move(pair)), specs_(std::move(preset)), threads_(threads) {
    if (U.rows() < static_cast<Eigen::Index>(kMinVineRows))
      throw DataError("tau criterion needs at least " + std::to_string(kMinVineRows) + " rows");
  }

  double score(const Edge& e) const { return std::abs(detail::edge_tau(po_, e)); }

  void score_all(std::vector<BridgeCandidate>& c, std::vector<double>& out) const {
    out.assign(c.size(), 0.0);
    parallel_for(c.size(), threads_, [&](std::size_t k) { out[k] = score(c[k].edge); });
  }

  /// Fits every edge of E_t that has no copula yet and propagates the level.
  void level_completed(int t, const std::vector<Edge>& E_t) {
    std::vector<std::size_t> todo;
    for (std::size_t k = 0; k < E_t.size(); ++k)
      if (!specs_.count(E_t[k])) todo.push_back(k);
    std::vector<PairCopulaSpec> fitted(todo.size());
    parallel_for(todo.size(), threads_, [&](std::size_t k) {
      const Edge& e = E_t[todo[k]];
      fitted[k] = fit_pair(po_.at(input_key_a(e)), po_.at(input_key_b(e)), pair_).spec;
    });
    for (std::size_t k = 0; k < todo.size(); ++k) specs_[E_t[todo[k]]] = fitted[k];
    for (const Edge& e : E_t) po_.propagate(e, specs_.at(e));
    po_.drop_given_size(static_cast<std::size_t>(t - 1));
  }

  const std::map<Edge, PairCopulaSpec>& copulas() const { return specs_; }

 private:
  PseudoObservations po_;
  FitPairOptions pair_;
  std::map<Edge, PairCopulaSpec> specs_;
  unsigned threads_;
};

enum class PolicyMode {
  manual,         // preferred edges, then generation order
  random,         // preferred edges, then a seeded shuffle
  tau_criterion,  // preferred edges, then |tau| descending
};

inline std::string_view to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::manual: return "manual";
    case PolicyMode::random: return "random";
    case PolicyMode::tau_criterion: return "tau_criterion";
  }
  return "?";
}

inline PolicyMode policy_mode_from_string(std::string_view s) {
  if (s == "manual") return PolicyMode::manual;
  if (s == "random") return PolicyMode::random;
  if (s == "tau" || s == "tau_criterion") return PolicyMode::tau_criterion;
  throw ConfigError("unknown bridging policy '" + std::string(s) + "' (manual, random, tau_criterion)");
}

struct BridgingPolicy {
  PolicyMode mode = PolicyMode::manual;
  /// Edges tried first at their level; each must be a candidate there.
  std::vector<Edge> preferred;
  std::uint64_t seed = 0;
  /// Required for tau_criterion; when set it is also told about every
  /// completed level, whatever the mode.
  TauCriterion* criterion = nullptr;
  bool strict_lemma = false;
};

struct LevelTrace {
  int level = 0;
  std::size_t nodes = 0;
  std::size_t inherited = 0;
  std::size_t target = 0;
  std::size_t components = 0;  // after inherited edges
  std::vector<Edge> candidates;  // in policy order
  std::vector<Edge> added;
  std::vector<Edge> skipped;
};

struct MergeTrace {
  std::vector<LevelTrace> levels;
};

inline void print_trace(std::ostream& os, const MergeTrace& tr) {
  for (const auto& lt : tr.levels) {
    os << "level " << lt.level << ": nodes=" << lt.nodes << " inherited=" << lt.inherited
       << " target=" << lt.target << " components=" << lt.components << '\n';
    auto list = [&](const char* name, const std::vector<Edge>& v) {
      os << "  " << name << ":";
      for (const auto& e : v) os << ' ' << to_string(e);
      os << '\n';
    };
    if (lt.inherited == lt.target) {
      os << "  complete\n";
      continue;
    }
    list("candidates", lt.candidates);
    list("added", lt.added);
    list("skipped", lt.skipped);
  }
}

struct MergeOptions {
  /// Levels of the merged vine. Negative: d - 1 when every input is
  /// untruncated, otherwise the largest input truncation.
  int truncation = -1;
  MergeTrace* trace = nullptr;
};

namespace detail {

inline std::vector<BridgeCandidate> order_candidates(std::vector<BridgeCandidate> cands, int t,
                                                     const BridgingPolicy& policy) {
  std::vector<BridgeCandidate> first;
  for (const Edge& p : policy.preferred) {
    if (static_cast<int>(p.level()) != t) continue;
    const auto it = std::find_if(cands.begin(), cands.end(), [&](const BridgeCandidate& c) { return c.edge == p; });
    if (it == cands.end())
      throw DataError("preferred bridging edge " + to_string(p) + " is not a candidate at level " + std::to_string(t));
    first.push_back(*it);
    cands.erase(it);
  }
  switch (policy.mode) {
    case PolicyMode::manual:
      break;
    case PolicyMode::random: {
      Rng rng(derive_seed(policy.seed, static_cast<std::uint64_t>(t)));
      rng.shuffle(cands);
      break;
    }
    case PolicyMode::tau_criterion: {
      if (!policy.criterion) throw ConfigError("tau_criterion policy needs pseudo-observations");
      std::vector<double> score;
      policy.criterion->score_all(cands, score);
      std::vector<std::size_t> idx(cands.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) {
        if (score[l] != score[r]) return score[l] > score[r];
        return cands[l].edge < cands[r].edge;
      });
      std::vector<BridgeCandidate> sorted;
      for (std::size_t k : idx) sorted.push_back(std::move(cands[k]));
      cands = std::move(sorted);
      break;
    }
  }
  first.insert(first.end(), std::make_move_iterator(cands.begin()), std::make_move_iterator(cands.end()));
  return first;
}

}  // namespace detail

/// Merges vines over disjoint variable sets into one R-vine. Within-vine
/// edges are kept at their levels; added edges carry the bridge flag.
inline VineStructure merge(const std::vector<VineStructure>& vines, const BridgingPolicy& policy = {},
                           const MergeOptions& opt = {}) {
  for (const auto& v : vines) {
    const auto bad = validate(v);
    if (!bad.empty()) throw DataError("input vine is invalid: " + to_string(bad.front()));
  }
  VineStructure out = concat_levels(vines);
  const int d = static_cast<int>(out.variables.size());
  int T = opt.truncation;
  if (T < 0) {
    const bool all_full = std::all_of(vines.begin(), vines.end(), [](const VineStructure& v) {
      return v.truncation == static_cast<int>(v.variables.size()) - 1;
    });
    T = all_full ? d - 1 : out.truncation;
  }
  T = std::min(T, d - 1);
  out.truncation = T;
  out.levels.resize(static_cast<std::size_t>(T));
  if (policy.mode == PolicyMode::tau_criterion && !policy.criterion)
    throw ConfigError("tau_criterion policy needs pseudo-observations");

  static const std::vector<Edge> none;
  for (int t = 1; t <= T; ++t) {
    auto& E = out.levels[static_cast<std::size_t>(t - 1)];
    const std::size_t target = static_cast<std::size_t>(d - t);
    if (E.size() > target) throw DataError("level " + std::to_string(t) + " has too many edges");
    LevelNodes nodes = reconstruct_and_init_dsu(t, out.variables, t == 1 ? none : out.level(t - 1), E);
    LevelTrace lt;
    lt.level = t;
    lt.nodes = nodes.supports.size();
    lt.inherited = E.size();
    lt.target = target;
    lt.components = nodes.dsu.components();
    if (E.size() < target) {
      auto ordered = detail::order_candidates(build_candidates(nodes, policy.strict_lemma && t >= 2), t, policy);
      const std::size_t before = E.size();
      lt.skipped = greedy_augment(E, ordered, nodes.dsu, target);
      lt.added.assign(E.begin() + static_cast<std::ptrdiff_t>(before), E.end());
      for (const auto& c : ordered) lt.candidates.push_back(c.edge);
      if (E.size() < target) {
        if (opt.trace) opt.trace->levels.push_back(std::move(lt));
        throw DataError("merge failed at level " + std::to_string(t) + ": " + std::to_string(target - E.size()) +
                        " bridging edges missing");
      }
    }
    if (opt.trace) opt.trace->levels.push_back(std::move(lt));
    if (policy.criterion) policy.criterion->level_completed(t, E);
  }
  return out;
}

// ---------------------------------------------------------------- nvc_fit

struct NvcOptions {
  std::size_t n_vars = 1;       // d
  std::size_t n_locs = 1;       // s
  std::size_t bridge_loc = 1;   // j0, 1-based
  int truncation = 22;
  FitVineOptions fit;           // pair options and threads; whitelist/variables ignored
  /// First-tree whitelist for the location vines as 0-based location pairs.
  std::vector<std::pair<std::size_t, std::size_t>> adjacency;
  std::vector<std::string> labels;  // per column; optional
  MergeTrace* trace = nullptr;
};

struct NvcFit {
  VineModel model;
  std::vector<VineModel> location_vines;
  std::optional<VineModel> variable_vine;
};

/// Fits one vine per variable over its locations and one over the variables
/// at the bridging location, merges them with the latter's edges as preferred
/// bridges (|tau| order beyond them) and fits the bridging pair copulas.
/// Column i * s + j (0-based) holds variable i at location j.
inline NvcFit nvc_fit(const Matrix& U, const NvcOptions& opt) {
  const std::size_t d = opt.n_vars, s = opt.n_locs;
  if (d == 0 || s == 0) throw ConfigError("nvc_fit: need at least one variable and one location");
  if (static_cast<std::size_t>(U.cols()) != d * s)
    throw DataError("nvc_fit: expected " + std::to_string(d * s) + " columns");
  if (opt.bridge_loc < 1 || opt.bridge_loc > s)
    throw ConfigError("bridging location must lie in 1.." + std::to_string(s));
  if (!opt.labels.empty() && opt.labels.size() != d * s) throw ConfigError("nvc_fit: one label per column expected");
  const std::size_t j0 = opt.bridge_loc - 1;
  const int T = std::max(0, opt.truncation);
  auto label_of = [&](std::size_t col) { return opt.labels.empty() ? std::to_string(col) : opt.labels[col]; };

  NvcFit result;
  result.location_vines.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    FitVineOptions fo = opt.fit;
    fo.truncation = std::min<int>(T, static_cast<int>(s) - 1);
    fo.variables.clear();
    fo.labels.clear();
    fo.first_tree_whitelist.clear();
    Matrix cols(U.rows(), static_cast<Eigen::Index>(s));
    for (std::size_t j = 0; j < s; ++j) {
      cols.col(static_cast<Eigen::Index>(j)) = U.col(static_cast<Eigen::Index>(i * s + j));
      fo.variables.push_back(static_cast<int>(i * s + j));
      fo.labels.push_back(label_of(i * s + j));
    }
    for (auto [a, b] : opt.adjacency) {
      if (a >= s || b >= s) throw ConfigError("adjacency names an unknown location");
      fo.first_tree_whitelist.emplace_back(static_cast<int>(i * s + a), static_cast<int>(i * s + b));
    }
    if (s == 1) {
      VineStructure vs;
      vs.variables = fo.variables;
      result.location_vines[i] = VineModel(vs, {}, fo.labels);
    } else {
      result.location_vines[i] = fit_vine(cols, fo);
    }
  }
  if (d == 1) {
    result.model = result.location_vines.front();
    return result;
  }

  FitVineOptions vo = opt.fit;
  vo.truncation = std::min<int>(T, static_cast<int>(d) - 1);
  vo.variables.clear();
  vo.labels.clear();
  vo.first_tree_whitelist.clear();
  Matrix vcols(U.rows(), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    vcols.col(static_cast<Eigen::Index>(i)) = U.col(static_cast<Eigen::Index>(i * s + j0));
    vo.variables.push_back(static_cast<int>(i * s + j0));
    vo.labels.push_back(label_of(i * s + j0));
  }
  result.variable_vine = fit_vine(vcols, vo);

  std::map<Edge, PairCopulaSpec> preset;
  std::vector<VineStructure> inputs;
  for (const auto& lv : result.location_vines) {
    inputs.push_back(lv.structure());
    for (std::size_t t = 0; t < lv.structure().levels.size(); ++t)
      for (std::size_t k = 0; k < lv.structure().levels[t].size(); ++k)
        preset[lv.structure().levels[t][k]] = lv.copulas()[t][k];
  }
  BridgingPolicy policy;
  policy.mode = PolicyMode::tau_criterion;
  const auto& vv = *result.variable_vine;
  for (std::size_t t = 0; t < vv.structure().levels.size(); ++t) {
    for (std::size_t k = 0; k < vv.structure().levels[t].size(); ++k) {
      Edge e = vv.structure().levels[t][k];
      preset[e] = vv.copulas()[t][k];
      e.bridge = true;
      policy.preferred.push_back(e);
    }
  }
  std::vector<int> all(d * s);
  std::iota(all.begin(), all.end(), 0);
  TauCriterion crit(U, all, opt.fit.pair, std::move(preset), opt.fit.threads);
  policy.criterion = &crit;
  MergeOptions mo;
  mo.truncation = std::min<int>(T, static_cast<int>(d * s) - 1);
  mo.trace = opt.trace;
  VineStructure merged = merge(inputs, policy, mo);

  CopulaLevels cops;
  for (const auto& lvl : merged.levels) {
    std::vector<PairCopulaSpec> c;
    for (const Edge& e : lvl) c.push_back(crit.copulas().at(e));
    cops.push_back(std::move(c));
  }
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < d * s; ++k) labels.push_back(label_of(k));
  result.model = VineModel(std::move(merged), std::move(cops), std::move(labels));
  return result;
}

}  // namespace vinebc
