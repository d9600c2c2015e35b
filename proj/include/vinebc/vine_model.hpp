#pragma once

// Fitted vine copulas: structure + one pair copula per edge.
//
// Data matrices are n x d with column p holding variable
// structure.variables[p]. Every conditional margin (x | C) the model needs
// gets a slot; level-1 inputs are the variable columns and each edge
// produces two output slots via its h-functions.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vinebc/core.hpp"
#include "vinebc/pair_copula.hpp"
#include "vinebc/stats.hpp"
#include "vinebc/vine_structure.hpp"

namespace vinebc {

using Matrix = Eigen::MatrixXd;

/// Conditional pseudo-observations keyed by margin (x | C).
class PseudoObservations {
 public:
  PseudoObservations() = default;

  /// Seeds the level-1 margins from the columns of U.
  PseudoObservations(const Matrix& U, const std::vector<int>& variables) : n_(static_cast<std::size_t>(U.rows())) {
    if (static_cast<std::size_t>(U.cols()) != variables.size())
      throw DataError("pseudo-observations: column count differs from variable count");
    for (std::size_t p = 0; p < variables.size(); ++p) {
      std::vector<double> col(n_);
      for (std::size_t i = 0; i < n_; ++i) col[i] = clamp_unit(U(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)));
      data_[{variables[p], {}}] = std::move(col);
    }
  }

  std::size_t rows() const { return n_; }
  bool contains(const NodeKey& k) const { return data_.count(k) != 0; }

  const std::vector<double>& at(const NodeKey& k) const {
    auto it = data_.find(k);
    if (it == data_.end()) {
      std::string g;
      for (int c : k.given) g += (g.empty() ? "" : ",") + std::to_string(c);
      throw DataError("missing pseudo-observations for " + std::to_string(k.var) + "|" + g);
    }
    return it->second;
  }

  void put(NodeKey k, std::vector<double> v) { data_[std::move(k)] = std::move(v); }

  /// Releases every margin conditioned on exactly `k` variables.
  void drop_given_size(std::size_t k) {
    std::erase_if(data_, [k](const auto& kv) { return kv.first.given.size() == k; });
  }

  /// Computes and stores both h-function outputs of an edge.
  void propagate(const Edge& e, const PairCopulaSpec& spec) {
    const auto& xa = at(input_key_a(e));
    const auto& xb = at(input_key_b(e));
    std::vector<double> oa(n_), ob(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      oa[i] = hfunc(spec, xa[i], xb[i], HDirection::cond_on_second);
      ob[i] = hfunc(spec, xa[i], xb[i], HDirection::cond_on_first);
    }
    put(output_key_a(e), std::move(oa));
    put(output_key_b(e), std::move(ob));
  }

 private:
  std::size_t n_ = 0;
  std::map<NodeKey, std::vector<double>> data_;
};

/// Pair copulas aligned with VineStructure::levels.
using CopulaLevels = std::vector<std::vector<PairCopulaSpec>>;

class VineModel {
 public:
  VineModel() = default;

  /// Validates the structure, checks every pair copula and derives (or
  /// verifies) the conditioning order used by the Rosenblatt transforms.
  VineModel(VineStructure structure, CopulaLevels copulas, std::vector<std::string> labels = {},
            std::vector<int> order = {})
      : structure_(std::move(structure)), copulas_(std::move(copulas)), labels_(std::move(labels)) {
    if (copulas_.size() != structure_.levels.size())
      throw DataError("vine model: copula levels do not match structure levels");
    for (std::size_t t = 0; t < copulas_.size(); ++t) {
      if (copulas_[t].size() != structure_.levels[t].size())
        throw DataError("vine model: copula count differs from edge count at level " + std::to_string(t + 1));
      for (const auto& s : copulas_[t]) check_spec(s);
    }
    if (labels_.empty()) {
      for (int v : structure_.variables) labels_.push_back(std::to_string(v));
    }
    if (labels_.size() != structure_.variables.size())
      throw DataError("vine model: label count differs from dimension");
    index_edges();
    compile(order.empty() ? peel_order() : std::move(order));
  }

  const VineStructure& structure() const { return structure_; }
  const CopulaLevels& copulas() const { return copulas_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<int>& order() const { return order_; }
  std::size_t dimension() const { return structure_.variables.size(); }
  int truncation() const { return structure_.truncation; }

  const PairCopulaSpec& copula(const Edge& e) const {
    const auto& lv = structure_.levels.at(e.level() - 1);
    for (std::size_t k = 0; k < lv.size(); ++k) {
      if (lv[k] == e) return copulas_[e.level() - 1][k];
    }
    throw DataError("vine model has no edge " + to_string(e));
  }

  /// Same model with every level above T removed.
  VineModel truncated(int T) const {
    T = std::clamp(T, 0, structure_.truncation);
    VineStructure s = structure_;
    s.truncation = T;
    s.levels.resize(static_cast<std::size_t>(T));
    CopulaLevels c(copulas_.begin(), copulas_.begin() + T);
    return VineModel(std::move(s), std::move(c), labels_);
  }

  double log_density(std::span<const double> u) const {
    check_row(u.size());
    std::vector<double> slots(slot_count_);
    return forward(u.data(), slots.data(), true);
  }

  Eigen::VectorXd log_density(const Matrix& U, unsigned threads = 1) const {
    check_cols(U);
    Eigen::VectorXd out(U.rows());
    for_rows(U.rows(), threads, [&](Eigen::Index lo, Eigen::Index hi) {
      std::vector<double> row(dimension()), slots(slot_count_);
      for (Eigen::Index i = lo; i < hi; ++i) {
        for (std::size_t p = 0; p < row.size(); ++p) row[p] = U(i, static_cast<Eigen::Index>(p));
        out(i) = forward(row.data(), slots.data(), true);
      }
    });
    return out;
  }

  std::vector<double> rosenblatt(std::span<const double> u) const {
    check_row(u.size());
    std::vector<double> slots(slot_count_), w(dimension());
    forward(u.data(), slots.data(), false);
    for (std::size_t p = 0; p < w.size(); ++p) w[p] = slots[top_slot_[p]];
    return w;
  }

  Matrix rosenblatt(const Matrix& U, unsigned threads = 1) const {
    check_cols(U);
    Matrix W(U.rows(), U.cols());
    for_rows(U.rows(), threads, [&](Eigen::Index lo, Eigen::Index hi) {
      std::vector<double> row(dimension()), slots(slot_count_);
      for (Eigen::Index i = lo; i < hi; ++i) {
        for (std::size_t p = 0; p < row.size(); ++p) row[p] = U(i, static_cast<Eigen::Index>(p));
        forward(row.data(), slots.data(), false);
        for (std::size_t p = 0; p < row.size(); ++p) W(i, static_cast<Eigen::Index>(p)) = slots[top_slot_[p]];
      }
    });
    return W;
  }

  std::vector<double> inverse_rosenblatt(std::span<const double> w) const {
    check_row(w.size());
    std::vector<double> slots(slot_count_), u(dimension());
    inverse(w.data(), slots.data());
    for (std::size_t p = 0; p < u.size(); ++p) u[p] = slots[p];
    return u;
  }

  Matrix inverse_rosenblatt(const Matrix& W, unsigned threads = 1) const {
    check_cols(W);
    Matrix U(W.rows(), W.cols());
    for_rows(W.rows(), threads, [&](Eigen::Index lo, Eigen::Index hi) {
      std::vector<double> row(dimension()), slots(slot_count_);
      for (Eigen::Index i = lo; i < hi; ++i) {
        for (std::size_t p = 0; p < row.size(); ++p) row[p] = W(i, static_cast<Eigen::Index>(p));
        inverse(row.data(), slots.data());
        for (std::size_t p = 0; p < row.size(); ++p) U(i, static_cast<Eigen::Index>(p)) = slots[p];
      }
    });
    return U;
  }

  /// n rows from the model: inverse Rosenblatt of seeded uniforms drawn row
  /// by row.
  Matrix simulate(std::size_t n, std::uint64_t seed, unsigned threads = 1) const {
    Rng rng(seed);
    Matrix W(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dimension()));
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index p = 0; p < W.cols(); ++p) W(i, p) = rng.uniform();
    return inverse_rosenblatt(W, threads);
  }

  /// Lower-triangular R-vine matrix in the usual convention: column k has
  /// the variable on the diagonal and its partners below, level 1 in the last
  /// row. Truncated entries are 0 (labels must then be nonzero to be
  /// unambiguous).
  std::vector<std::vector<int>> to_matrix() const {
    const std::size_t d = dimension();
    std::vector<std::vector<int>> M(d, std::vector<int>(d, 0));
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t p = pos_of(order_[d - 1 - k]);
      M[k][k] = order_[d - 1 - k];
      for (std::size_t t = 0; t < chains_[p].size(); ++t) {
        const auto& link = chains_[p][t];
        const Edge& e = edge_at(link.edge);
        M[d - 1 - t][k] = link.is_a ? e.b : e.a;
      }
    }
    return M;
  }

  std::size_t position(int variable) const { return pos_of(variable); }

 private:
  struct EdgePlan {
    std::size_t in_a, in_b, out_a, out_b;
    PairCopulaSpec spec;
    bool indep;
  };
  struct ChainLink {
    std::size_t edge;  // global edge index
    bool is_a;         // the chain variable is the edge's first conditioned variable
  };

  const Edge& edge_at(std::size_t g) const {
    return structure_.levels[level_of_[g]][g - level_offset_[level_of_[g]]];
  }

  std::size_t pos_of(int variable) const {
    const auto& v = structure_.variables;
    const auto it = std::lower_bound(v.begin(), v.end(), variable);
    if (it == v.end() || *it != variable) throw DataError("unknown variable " + std::to_string(variable));
    return static_cast<std::size_t>(it - v.begin());
  }

  void check_row(std::size_t n) const {
    if (n != dimension()) throw DataError("vine model: expected " + std::to_string(dimension()) + " values");
  }
  void check_cols(const Matrix& U) const { check_row(static_cast<std::size_t>(U.cols())); }

  template <typename F>
  static void for_rows(Eigen::Index n, unsigned threads, F&& body) {
    constexpr Eigen::Index block = 256;
    const auto blocks = static_cast<std::size_t>((n + block - 1) / block);
    parallel_for(blocks, threads, [&](std::size_t b) {
      const Eigen::Index lo = static_cast<Eigen::Index>(b) * block;
      body(lo, std::min(n, lo + block));
    });
  }

  // Conditioning order by repeatedly removing a variable that appears in no
  // conditioning set and as a conditioned variable exactly once per level.
  std::vector<int> peel_order() const {
    const std::size_t d = dimension();
    const int T = structure_.truncation;
    std::vector<std::vector<int>> cond_count(d, std::vector<int>(static_cast<std::size_t>(T), 0));
    std::vector<int> in_condset(d, 0);
    std::vector<std::vector<std::size_t>> incident(d);  // global edges where conditioned
    std::size_t g = 0;
    for (int t = 1; t <= T; ++t) {
      for (const Edge& e : structure_.level(t)) {
        for (int x : {e.a, e.b}) {
          ++cond_count[pos_of(x)][static_cast<std::size_t>(t - 1)];
          incident[pos_of(x)].push_back(g);
        }
        for (int c : e.cond) ++in_condset[pos_of(c)];
        ++g;
      }
    }
    std::vector<bool> removed(d, false), edge_gone(g, false);
    std::vector<int> peeled;
    for (std::size_t m = d; m >= 1; --m) {
      const int K = std::min<int>(T, static_cast<int>(m) - 1);
      std::optional<std::size_t> pick;
      for (std::size_t p = d; p-- > 0;) {
        if (removed[p] || in_condset[p] != 0) continue;
        bool ok = true;
        for (int t = 0; t < T && ok; ++t) ok = cond_count[p][static_cast<std::size_t>(t)] == (t < K ? 1 : 0);
        if (ok) {
          pick = p;
          break;
        }
      }
      if (!pick) throw DataError("vine structure admits no conditioning order");
      const std::size_t p = *pick;
      removed[p] = true;
      peeled.push_back(structure_.variables[p]);
      for (std::size_t ge : incident[p]) {
        if (edge_gone[ge]) continue;
        edge_gone[ge] = true;
        const Edge& e = edge_at(ge);
        for (int x : {e.a, e.b}) --cond_count[pos_of(x)][e.level() - 1];
        for (int c : e.cond) --in_condset[pos_of(c)];
      }
    }
    std::reverse(peeled.begin(), peeled.end());
    return peeled;
  }

  void index_edges() {
    level_of_.clear();
    level_offset_.clear();
    std::size_t g = 0;
    for (std::size_t t = 0; t < structure_.levels.size(); ++t) {
      level_offset_.push_back(g);
      for (std::size_t k = 0; k < structure_.levels[t].size(); ++k, ++g) level_of_.push_back(t);
    }
    resolve_endpoints(structure_);  // throws on an invalid structure
  }

  void compile(std::vector<int> order) {
    const std::size_t d = dimension();
    const std::size_t g = level_of_.size();
    plan_.clear();
    slot_count_ = d + 2 * g;

    std::map<NodeKey, std::size_t> slot;
    for (std::size_t p = 0; p < d; ++p) slot[{structure_.variables[p], {}}] = p;
    for (std::size_t ge = 0; ge < g; ++ge) {
      const Edge& e = edge_at(ge);
      const auto ia = slot.find(input_key_a(e));
      const auto ib = slot.find(input_key_b(e));
      if (ia == slot.end() || ib == slot.end()) throw DataError("vine model: unresolved margin for " + to_string(e));
      const PairCopulaSpec& s = copulas_[level_of_[ge]][ge - level_offset_[level_of_[ge]]];
      plan_.push_back({ia->second, ib->second, d + 2 * ge, d + 2 * ge + 1, s, s.family == Family::independence});
      slot[output_key_a(e)] = d + 2 * ge;
      slot[output_key_b(e)] = d + 2 * ge + 1;
    }

    // Chains: every edge belongs to its later-ordered conditioned variable.
    if (order.size() != d) throw DataError("conditioning order must list every variable once");
    std::vector<std::size_t> rank(d, d);
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t p = pos_of(order[k]);
      if (rank[p] != d) throw DataError("conditioning order repeats variable " + std::to_string(order[k]));
      rank[p] = k;
    }
    chains_.assign(d, {});
    for (std::size_t ge = 0; ge < g; ++ge) {
      const Edge& e = edge_at(ge);
      const bool a_later = rank[pos_of(e.a)] > rank[pos_of(e.b)];
      const int x = a_later ? e.a : e.b;
      for (int c : e.cond) {
        if (rank[pos_of(c)] > rank[pos_of(x)])
          throw DataError("conditioning order is not a sampling order at edge " + to_string(e));
      }
      chains_[pos_of(x)].push_back({ge, a_later});
    }
    top_slot_.assign(d, 0);
    for (std::size_t p = 0; p < d; ++p) {
      auto& ch = chains_[p];
      std::sort(ch.begin(), ch.end(), [](const ChainLink& l, const ChainLink& r) { return l.edge < r.edge; });
      std::size_t cur = p;
      for (std::size_t t = 0; t < ch.size(); ++t) {
        const EdgePlan& ep = plan_[ch[t].edge];
        if (level_of_[ch[t].edge] != t || (ch[t].is_a ? ep.in_a : ep.in_b) != cur)
          throw DataError("conditioning order is not a sampling order for variable " +
                          std::to_string(structure_.variables[p]));
        cur = ch[t].is_a ? ep.out_a : ep.out_b;
      }
      top_slot_[p] = cur;
    }
    order_ = std::move(order);
  }

  double forward(const double* u, double* slots, bool density) const {
    const std::size_t d = dimension();
    for (std::size_t p = 0; p < d; ++p) slots[p] = clamp_unit(u[p]);
    double ld = 0.0;
    for (const EdgePlan& ep : plan_) {
      const double xa = slots[ep.in_a], xb = slots[ep.in_b];
      if (ep.indep) {
        slots[ep.out_a] = xa;
        slots[ep.out_b] = xb;
        continue;
      }
      if (density) ld += vinebc::log_density(ep.spec, xa, xb);
      slots[ep.out_a] = hfunc(ep.spec, xa, xb, HDirection::cond_on_second);
      slots[ep.out_b] = hfunc(ep.spec, xa, xb, HDirection::cond_on_first);
    }
    if (density && !std::isfinite(ld)) throw NumericalError("vine log-density is not finite");
    return ld;
  }

  void inverse(const double* w, double* slots) const {
    for (int x : order_) {
      const std::size_t p = pos_of(x);
      const auto& ch = chains_[p];
      slots[top_slot_[p]] = clamp_unit(w[p]);
      for (std::size_t t = ch.size(); t-- > 0;) {
        const EdgePlan& ep = plan_[ch[t].edge];
        if (ch[t].is_a) {
          const double out = slots[ep.out_a];
          slots[ep.in_a] = ep.indep ? out : hinv(ep.spec, out, slots[ep.in_b], HDirection::cond_on_second);
        } else {
          const double out = slots[ep.out_b];
          slots[ep.in_b] = ep.indep ? out : hinv(ep.spec, out, slots[ep.in_a], HDirection::cond_on_first);
        }
      }
      for (const ChainLink& l : ch) {
        const EdgePlan& ep = plan_[l.edge];
        const double xa = slots[ep.in_a], xb = slots[ep.in_b];
        if (ep.indep) {
          slots[ep.out_a] = xa;
          slots[ep.out_b] = xb;
        } else {
          slots[ep.out_a] = hfunc(ep.spec, xa, xb, HDirection::cond_on_second);
          slots[ep.out_b] = hfunc(ep.spec, xa, xb, HDirection::cond_on_first);
        }
      }
    }
  }

  VineStructure structure_;
  CopulaLevels copulas_;
  std::vector<std::string> labels_;
  std::vector<int> order_;

  std::vector<std::size_t> level_of_, level_offset_;
  std::vector<EdgePlan> plan_;
  std::vector<std::vector<ChainLink>> chains_;  // by variable position
  std::vector<std::size_t> top_slot_;
  std::size_t slot_count_ = 0;
};

// ---------------------------------------------------------------- fitting

struct FitVineOptions {
  FitPairOptions pair;
  int truncation = -1;  // < 0: no truncation
  /// Allowed first-tree pairs (variable labels); empty means unrestricted.
  std::vector<std::pair<int, int>> first_tree_whitelist;
  std::vector<int> variables;        // labels of the columns; default 0..d-1
  std::vector<std::string> labels;   // display labels; default the variable ids
  unsigned threads = 1;
};

inline constexpr std::size_t kMinVineRows = 30;

namespace detail {

struct WeightedEdge {
  Edge edge;
  std::size_t n1, n2;
  double weight;
};

// Maximum spanning tree by Kruskal; ties broken by the edge order.
inline std::vector<WeightedEdge> max_spanning_tree(std::vector<WeightedEdge> cands, std::size_t nodes) {
  std::sort(cands.begin(), cands.end(), [](const WeightedEdge& l, const WeightedEdge& r) {
    if (l.weight != r.weight) return l.weight > r.weight;
    return l.edge < r.edge;
  });
  DisjointSetUnion dsu(nodes);
  std::vector<WeightedEdge> tree;
  for (auto& c : cands) {
    if (dsu.unite(c.n1, c.n2) == DisjointSetUnion::UnionResult::merged) tree.push_back(std::move(c));
    if (tree.size() + 1 == nodes) break;
  }
  return tree;
}

inline double edge_tau(const PseudoObservations& po, const Edge& e) {
  return kendall_tau(po.at(input_key_a(e)), po.at(input_key_b(e)));
}

// Candidate (a, b | S) joining two nodes given by their supports, or nothing
// if the supports do not differ in exactly one variable each.
inline std::optional<Edge> join_supports(const std::vector<int>& su, const std::vector<int>& sv) {
  std::vector<int> S;
  std::set_intersection(su.begin(), su.end(), sv.begin(), sv.end(), std::back_inserter(S));
  if (S.size() + 1 != su.size() || S.size() + 1 != sv.size()) return std::nullopt;
  int a = 0, b = 0;
  for (int x : su)
    if (!std::binary_search(S.begin(), S.end(), x)) a = x;
  for (int x : sv)
    if (!std::binary_search(S.begin(), S.end(), x)) b = x;
  return Edge(a, b, S);
}

}  // namespace detail

/// Fits pair copulas on a given structure, propagating pseudo-observations
/// level by level. Copulas found in `preset` are reused without refitting.
inline VineModel fit_on_structure(const Matrix& U, const VineStructure& structure, const FitVineOptions& opt = {},
                                  const std::map<Edge, PairCopulaSpec>& preset = {}) {
  if (static_cast<std::size_t>(U.rows()) < kMinVineRows)
    throw DataError("vine fit needs at least " + std::to_string(kMinVineRows) + " rows");
  PseudoObservations po(U, structure.variables);
  CopulaLevels cops;
  for (int t = 1; t <= structure.truncation; ++t) {
    const auto& edges = structure.level(t);
    std::vector<PairCopulaSpec> specs(edges.size());
    parallel_for(edges.size(), opt.threads, [&](std::size_t k) {
      const auto it = preset.find(edges[k]);
      if (it != preset.end()) {
        specs[k] = it->second;
      } else {
        specs[k] = fit_pair(po.at(input_key_a(edges[k])), po.at(input_key_b(edges[k])), opt.pair).spec;
      }
    });
    if (t < structure.truncation) {
      for (std::size_t k = 0; k < edges.size(); ++k) po.propagate(edges[k], specs[k]);
    }
    cops.push_back(std::move(specs));
  }
  return VineModel(structure, std::move(cops), opt.labels);
}

/// Sequential (Dissmann-type) selection: each level is a maximum spanning
/// tree on |Kendall tau| among the pairs allowed by proximity, followed by
/// pair-copula selection and h-function propagation.
inline VineModel fit_vine(const Matrix& U, const FitVineOptions& opt = {}) {
  const std::size_t n = static_cast<std::size_t>(U.rows());
  const std::size_t d = static_cast<std::size_t>(U.cols());
  if (d == 0) throw DataError("fit_vine: no columns");
  if (n < kMinVineRows) throw DataError("fit_vine needs at least " + std::to_string(kMinVineRows) + " rows");
  std::vector<int> vars = opt.variables;
  if (vars.empty()) {
    vars.resize(d);
    std::iota(vars.begin(), vars.end(), 0);
  }
  if (vars.size() != d) throw DataError("fit_vine: variable labels differ from column count");
  // columns sorted by label
  std::vector<std::size_t> perm(d);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::sort(perm.begin(), perm.end(), [&](std::size_t l, std::size_t r) { return vars[l] < vars[r]; });
  Matrix Us(U.rows(), U.cols());
  std::vector<int> sorted_vars(d);
  std::vector<std::string> sorted_labels;
  for (std::size_t p = 0; p < d; ++p) {
    Us.col(static_cast<Eigen::Index>(p)) = U.col(static_cast<Eigen::Index>(perm[p]));
    sorted_vars[p] = vars[perm[p]];
    if (!opt.labels.empty()) sorted_labels.push_back(opt.labels.at(perm[p]));
  }
  if (std::adjacent_find(sorted_vars.begin(), sorted_vars.end()) != sorted_vars.end())
    throw DataError("fit_vine: duplicate variable labels");

  VineStructure vs;
  vs.variables = sorted_vars;
  const int full = static_cast<int>(d) - 1;
  vs.truncation = opt.truncation < 0 ? full : std::min(opt.truncation, full);

  PseudoObservations po(Us, sorted_vars);
  CopulaLevels cops;
  // nodes of the current level: supports and, for t >= 2, endpoints
  std::vector<std::vector<int>> supports;
  for (int v : sorted_vars) supports.push_back({v});
  std::vector<std::pair<std::size_t, std::size_t>> prev_ends;

  for (int t = 1; t <= vs.truncation; ++t) {
    std::vector<detail::WeightedEdge> cands;
    const std::size_t nodes = supports.size();
    if (t == 1) {
      if (!opt.first_tree_whitelist.empty()) {
        std::map<int, std::size_t> pos;
        for (std::size_t p = 0; p < d; ++p) pos[sorted_vars[p]] = p;
        std::set<std::pair<int, int>> seen;
        for (auto [x, y] : opt.first_tree_whitelist) {
          if (!pos.count(x) || !pos.count(y) || x == y) throw DataError("first-tree whitelist names unknown variables");
          if (!seen.insert({std::min(x, y), std::max(x, y)}).second) continue;
          cands.push_back({Edge(x, y), pos[x], pos[y], 0.0});
        }
        DisjointSetUnion dsu(d);
        for (const auto& c : cands) dsu.unite(c.n1, c.n2);
        if (dsu.components() != 1) throw DataError("first-tree whitelist graph is disconnected");
      } else {
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = i + 1; j < d; ++j) cands.push_back({Edge(sorted_vars[i], sorted_vars[j]), i, j, 0.0});
      }
    } else {
      std::map<std::size_t, std::vector<std::size_t>> incident;
      for (std::size_t k = 0; k < nodes; ++k) {
        incident[prev_ends[k].first].push_back(k);
        incident[prev_ends[k].second].push_back(k);
      }
      for (const auto& [shared, list] : incident) {
        for (std::size_t x = 0; x < list.size(); ++x) {
          for (std::size_t y = x + 1; y < list.size(); ++y) {
            auto e = detail::join_supports(supports[list[x]], supports[list[y]]);
            if (e) cands.push_back({*e, list[x], list[y], 0.0});
          }
        }
      }
    }
    parallel_for(cands.size(), opt.threads, [&](std::size_t k) {
      cands[k].weight = std::abs(detail::edge_tau(po, cands[k].edge));
    });
    auto tree = detail::max_spanning_tree(std::move(cands), nodes);
    if (tree.size() + 1 != nodes) throw DataError("fit_vine: level " + std::to_string(t) + " is not connected");
    std::sort(tree.begin(), tree.end(), [](const auto& l, const auto& r) { return l.edge < r.edge; });

    std::vector<Edge> edges;
    for (const auto& w : tree) edges.push_back(w.edge);
    std::vector<PairCopulaSpec> specs(edges.size());
    parallel_for(edges.size(), opt.threads, [&](std::size_t k) {
      specs[k] = fit_pair(po.at(input_key_a(edges[k])), po.at(input_key_b(edges[k])), opt.pair).spec;
    });
    if (t < vs.truncation) {
      for (std::size_t k = 0; k < edges.size(); ++k) po.propagate(edges[k], specs[k]);
      if (t >= 2) po.drop_given_size(static_cast<std::size_t>(t - 1));
    }
    std::vector<std::vector<int>> next_supports;
    prev_ends.clear();
    for (const auto& w : tree) {
      next_supports.push_back(edge_support(w.edge));
      prev_ends.emplace_back(w.n1, w.n2);
    }
    supports = std::move(next_supports);
    vs.levels.push_back(std::move(edges));
    cops.push_back(std::move(specs));
  }
  return VineModel(std::move(vs), std::move(cops), sorted_labels);
}

// ---------------------------------------------------------------- model file
//
//   #dimension,3
//   #truncation,2
//   #variables,1;2;3
//   #labels,x;y;z
//   #order,1;2;3
//   #matrix,3;0;0
//   ...
//   1,1,2,,gaussian,0,0.5
//   2,1,3,2,clayton,180,1.2,bridge

inline void write_model(std::ostream& os, const VineModel& m) {
  const auto& s = m.structure();
  os << "#dimension," << m.dimension() << '\n';
  os << "#truncation," << s.truncation << '\n';
  os << "#variables," << detail::join_ints(s.variables) << '\n';
  os << "#labels,";
  for (std::size_t i = 0; i < m.labels().size(); ++i) os << (i ? ";" : "") << m.labels()[i];
  os << '\n';
  os << "#order," << detail::join_ints(m.order()) << '\n';
  for (const auto& row : m.to_matrix()) os << "#matrix," << detail::join_ints(row) << '\n';
  const auto old_prec = os.precision(std::numeric_limits<double>::max_digits10);
  for (int t = 1; t <= s.truncation; ++t) {
    for (std::size_t k = 0; k < s.level(t).size(); ++k) {
      const Edge& e = s.level(t)[k];
      const auto& c = m.copulas()[static_cast<std::size_t>(t - 1)][k];
      write_edge_fields(os, t, e);
      os << ',' << to_string(c.family) << ',' << c.rotation << ',' << c.parameter;
      if (e.bridge) os << ",bridge";
      os << '\n';
    }
  }
  os.precision(old_prec);
}

inline VineModel read_model(std::istream& is) {
  VineStructure s;
  std::optional<int> dim, trunc;
  std::vector<std::string> labels;
  std::vector<int> order;
  std::vector<std::pair<int, std::pair<Edge, PairCopulaSpec>>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto cut = line.find(',');
      if (cut == std::string::npos) continue;
      const std::string key = detail::trim(line.substr(1, cut - 1));
      const std::string val = line.substr(cut + 1);
      if (key == "dimension") dim = detail::parse_int(val, "dimension");
      else if (key == "truncation") trunc = detail::parse_int(val, "truncation");
      else if (key == "variables") s.variables = detail::parse_int_list(val, "variable");
      else if (key == "order") order = detail::parse_int_list(val, "order entry");
      else if (key == "labels") labels = val.empty() ? std::vector<std::string>{} : detail::split(val, ';');
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 7 && f.size() != 8)
      throw DataError("model line " + std::to_string(lineno) + ": expected level,a,b,C,family,rotation,parameter");
    Edge e(detail::parse_int(f[1], "variable"), detail::parse_int(f[2], "variable"),
           detail::parse_int_list(f[3], "conditioning variable"));
    if (f.size() == 8) {
      if (detail::trim(f[7]) != "bridge") throw DataError("model line " + std::to_string(lineno) + ": unknown flag");
      e.bridge = true;
    }
    PairCopulaSpec c;
    try {
      c.family = family_from_string(detail::trim(f[4]));
      c.rotation = detail::parse_int(f[5], "rotation");
      c.parameter = std::stod(detail::trim(f[6]));
    } catch (const DomainError& ex) {
      throw DataError("model line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const std::logic_error&) {
      throw DataError("model line " + std::to_string(lineno) + ": bad parameter");
    }
    rows.push_back({detail::parse_int(f[0], "level"), {std::move(e), c}});
  }
  if (!trunc) throw DataError("model file lacks #truncation");
  s.truncation = *trunc;
  if (dim && static_cast<std::size_t>(*dim) != s.variables.size()) throw DataError("model file: dimension mismatch");
  s.levels.assign(static_cast<std::size_t>(std::max(0, s.truncation)), {});
  CopulaLevels cops(s.levels.size());
  for (auto& [t, ec] : rows) {
    if (t < 1 || t > s.truncation) throw DataError("model file: edge level out of range");
    s.levels[static_cast<std::size_t>(t - 1)].push_back(std::move(ec.first));
    cops[static_cast<std::size_t>(t - 1)].push_back(ec.second);
  }
  try {
    return VineModel(std::move(s), std::move(cops), std::move(labels), std::move(order));
  } catch (const DomainError& ex) {
    throw DataError(std::string("model file: ") + ex.what());
  }
}

}  // namespace vinebc
