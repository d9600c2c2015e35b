#pragma once

// Evaluation metrics: empirical 2-Wasserstein distance and relative
// improvement, spatial correlation over path-length bins, autocorrelation
// discrepancies and the annual block bootstrap.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vinebc/core.hpp"
#include "vinebc/panel.hpp"

namespace vinebc {

using Matrix = Eigen::MatrixXd;

inline constexpr std::size_t kW2MaxPoints = 2000;

namespace detail {

// Minimum-cost perfect assignment on a dense n x n cost matrix (row-major,
// cost[i * n + j]) after Jonker and Volgenant: column reduction, two rounds of
// augmenting row reduction, then shortest augmenting paths for the rest.
// Returns the column assigned to each row.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  auto c = [&](std::size_t i, std::size_t j) { return cost[i * n + j]; };
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> rowsol(n, none), colsol(n, none), free_rows, pred(n), collist(n);
  std::vector<double> v(n), d(n);
  std::vector<int> matches(n, 0);
  if (n == 0) return {};
  if (n == 1) return {0};

  for (std::size_t jj = n; jj-- > 0;) {
    std::size_t imin = 0;
    double m = c(0, jj);
    for (std::size_t i = 1; i < n; ++i)
      if (c(i, jj) < m) m = c(i, jj), imin = i;
    v[jj] = m;
    if (++matches[imin] == 1) rowsol[imin] = jj, colsol[jj] = imin;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (matches[i] == 0) {
      free_rows.push_back(i);
    } else if (matches[i] == 1) {
      const std::size_t j1 = rowsol[i];
      double m = inf;
      for (std::size_t j = 0; j < n; ++j)
        if (j != j1) m = std::min(m, c(i, j) - v[j]);
      v[j1] -= m;
    }
  }

  for (int round = 0; round < 2; ++round) {
    std::vector<std::size_t> todo;
    todo.swap(free_rows);
    std::size_t k = 0;
    std::size_t guard = 0;
    while (k < todo.size()) {
      const std::size_t i = todo[k++];
      double umin = c(i, 0) - v[0], usub = inf;
      std::size_t j1 = 0, j2 = none;
      for (std::size_t j = 1; j < n; ++j) {
        const double h = c(i, j) - v[j];
        if (h < usub) {
          if (h >= umin) {
            usub = h, j2 = j;
          } else {
            usub = umin, j2 = j1;
            umin = h, j1 = j;
          }
        }
      }
      std::size_t i0 = colsol[j1];
      const bool strict = umin < usub;
      if (strict) v[j1] -= usub - umin;
      else if (i0 != none) j1 = j2, i0 = colsol[j2];
      if (rowsol[i] != none && colsol[rowsol[i]] == i) colsol[rowsol[i]] = none;
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 != none) {
        rowsol[i0] = none;
        if (strict && ++guard < 8 * n) todo[--k] = i0;
        else free_rows.push_back(i0);
      }
    }
  }

  for (const std::size_t freerow : free_rows) {
    for (std::size_t j = 0; j < n; ++j) d[j] = c(freerow, j) - v[j], pred[j] = freerow, collist[j] = j;
    std::size_t low = 0, up = 0, last = 0, endofpath = none;
    double m = 0;
    while (endofpath == none) {
      if (up == low) {
        last = low;
        m = d[collist[up++]];
        for (std::size_t k = up; k < n; ++k) {
          const std::size_t j = collist[k];
          const double h = d[j];
          if (h <= m) {
            if (h < m) up = low, m = h;
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (std::size_t k = low; k < up; ++k)
          if (colsol[collist[k]] == none) {
            endofpath = collist[k];
            break;
          }
      }
      if (endofpath != none) break;
      const std::size_t j1 = collist[low++];
      const std::size_t i = colsol[j1];
      const double h = c(i, j1) - v[j1] - m;
      for (std::size_t k = up; k < n; ++k) {
        const std::size_t j = collist[k];
        const double v2 = c(i, j) - v[j] - h;
        if (v2 < d[j]) {
          pred[j] = i;
          if (v2 == m) {
            if (colsol[j] == none) {
              endofpath = j;
              break;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
          d[j] = v2;
        }
      }
    }
    for (std::size_t k = 0; k < last; ++k) {
      const std::size_t j1 = collist[k];
      v[j1] += d[j1] - m;
    }
    std::size_t i;
    do {
      i = pred[endofpath];
      colsol[endofpath] = i;
      const std::size_t j1 = endofpath;
      endofpath = rowsol[i];
      rowsol[i] = j1;
    } while (i != freerow);
  }
  return rowsol;
}

inline std::vector<std::size_t> subsample_index(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Matrix take_rows(const Matrix& A, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), A.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = A.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

}  // namespace detail

struct W2Options {
  std::size_t max_points = kW2MaxPoints;
  std::uint64_t seed = 0;
};

struct W2Result {
  double distance = 0;
  std::size_t points = 0;
  bool subsampled = false;
};

/// Exact empirical W2 between the row samples A and B. Unequal sizes are
/// subsampled to the smaller one; above max_points both are subsampled, with
/// the same time indices when the sizes agree.
inline W2Result wasserstein2_detail(const Matrix& A, const Matrix& B, const W2Options& opt = {}) {
  if (A.rows() == 0 || B.rows() == 0) throw DataError("wasserstein2: empty sample");
  if (A.cols() != B.cols() || A.cols() == 0) throw DataError("wasserstein2: dimension mismatch");
  if (!A.allFinite() || !B.allFinite()) throw DataError("wasserstein2: non-finite sample");
  const auto na = static_cast<std::size_t>(A.rows()), nb = static_cast<std::size_t>(B.rows());
  const std::size_t m = std::min({na, nb, opt.max_points});
  Rng rng(opt.seed);
  W2Result res;
  res.points = m;
  res.subsampled = na > m || nb > m;
  std::vector<std::size_t> ia, ib;
  if (na > m) ia = detail::subsample_index(na, m, rng);
  if (nb > m) ib = na == nb ? ia : detail::subsample_index(nb, m, rng);
  const Matrix a = ia.empty() ? A : detail::take_rows(A, ia);
  const Matrix b = ib.empty() ? B : detail::take_rows(B, ib);
  double total = 0;
  if (a.cols() == 1) {
    std::vector<double> x(a.data(), a.data() + m), y(b.data(), b.data() + m);
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    for (std::size_t k = 0; k < m; ++k) total += (x[k] - y[k]) * (x[k] - y[k]);
  } else {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ar = a, br = b;
    const auto k = static_cast<std::size_t>(a.cols());
    std::vector<double> cost(m * m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* x = ar.data() + i * k;
      for (std::size_t j = 0; j < m; ++j) {
        const double* y = br.data() + j * k;
        double c = 0;
        for (std::size_t l = 0; l < k; ++l) c += (x[l] - y[l]) * (x[l] - y[l]);
        cost[i * m + j] = c;
      }
    }
    const auto match = detail::solve_assignment(cost, m);
    for (std::size_t i = 0; i < m; ++i) total += cost[i * m + match[i]];
  }
  res.distance = std::sqrt(total / static_cast<double>(m));
  return res;
}

inline double wasserstein2(const Matrix& A, const Matrix& B, const W2Options& opt = {}) {
  return wasserstein2_detail(A, B, opt).distance;
}

/// (W2(ref, raw) - W2(ref, corrected)) / W2(ref, raw); empty when W2(ref, raw) = 0.
inline std::optional<double> improvement(const Matrix& ref, const Matrix& raw, const Matrix& corrected,
                                         const W2Options& opt = {}) {
  const double base = wasserstein2(ref, raw, opt);
  if (base == 0.0) return std::nullopt;
  return (base - wasserstein2(ref, corrected, opt)) / base;
}

// ------------------------------------------------------------ spatial

enum class SpatialMode {
  pairwise,  // mean temporal correlation of standardized columns over the pairs in a bin
  anomaly    // spatial-anomaly products normalized by the spatial variance
};

inline std::string_view to_string(SpatialMode m) { return m == SpatialMode::pairwise ? "pairwise" : "anomaly"; }

inline SpatialMode spatial_mode_from_string(std::string_view s) {
  if (s == "pairwise") return SpatialMode::pairwise;
  if (s == "anomaly") return SpatialMode::anomaly;
  throw ConfigError("unknown spatial correlation mode '" + std::string(s) + "' (pairwise, anomaly)");
}

using RadiusBins = std::map<int, std::vector<std::pair<std::size_t, std::size_t>>>;

/// Every location pair at radius 1; used when no adjacency is given.
inline RadiusBins all_pairs_bin(std::size_t s) {
  RadiusBins b;
  for (std::size_t a = 0; a < s; ++a)
    for (std::size_t c = a + 1; c < s; ++c) b[1].push_back({a, c});
  return b;
}

struct SpatialCorrelation {
  std::vector<int> radii;
  std::vector<double> rho;
  std::vector<int> omitted;  // radii with empty bins or undefined normalization
};

/// Spatial correlation function of variable i (0-based) over the given bins.
/// Columns are standardized over time first.
inline SpatialCorrelation spatial_correlation(const PanelDataset& p, std::size_t i, const RadiusBins& bins,
                                              SpatialMode mode = SpatialMode::pairwise) {
  const std::size_t s = p.n_locs(), n = p.n_time();
  if (i >= p.n_vars()) throw DomainError("spatial_correlation: variable out of range");
  if (n < 2) throw DataError("spatial_correlation: need at least two time points");
  Matrix Z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s));
  std::vector<bool> constant(s, false);
  for (std::size_t j = 0; j < s; ++j) {
    auto c = p.values.col(static_cast<Eigen::Index>(p.col(i, j)));
    const double m = c.mean();
    const double sd = std::sqrt((c.array() - m).square().sum() / static_cast<double>(n));
    constant[j] = !(sd > 0);
    Z.col(static_cast<Eigen::Index>(j)) = constant[j] ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)).eval()
                                                      : ((c.array() - m) / sd).matrix().eval();
  }
  double spatial_var = 1.0;
  if (mode == SpatialMode::anomaly) {
    const Eigen::VectorXd centre = Z.rowwise().mean();
    Z.colwise() -= centre;
    spatial_var = Z.array().square().sum() / static_cast<double>(n * s);
  }
  SpatialCorrelation out;
  for (const auto& [r, pairs] : bins) {
    std::vector<std::pair<std::size_t, std::size_t>> ok;
    for (auto [a, b] : pairs) {
      if (a >= s || b >= s) throw DomainError("spatial_correlation: bin names an unknown location");
      if (mode == SpatialMode::anomaly || (!constant[a] && !constant[b])) ok.push_back({a, b});
    }
    if (ok.empty() || !(spatial_var > 1e-12)) {
      out.omitted.push_back(r);
      continue;
    }
    double acc = 0;
    for (auto [a, b] : ok) acc += Z.col(static_cast<Eigen::Index>(a)).dot(Z.col(static_cast<Eigen::Index>(b)));
    out.radii.push_back(r);
    out.rho.push_back(acc / static_cast<double>(n * ok.size()) / spatial_var);
  }
  return out;
}

inline double spatial_corr_mse(const SpatialCorrelation& method, const SpatialCorrelation& ref) {
  if (method.radii != ref.radii) throw DataError("spatial_corr_mse: radii differ");
  if (ref.radii.empty()) throw DataError("spatial_corr_mse: no radii");
  double acc = 0;
  for (std::size_t k = 0; k < ref.rho.size(); ++k) acc += (method.rho[k] - ref.rho[k]) * (method.rho[k] - ref.rho[k]);
  return acc / static_cast<double>(ref.rho.size());
}

// ---------------------------------------------------------------- ACF

/// Sample autocorrelation at lags 0..max_lag, normalized by n.
inline std::vector<double> acf(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  if (n <= max_lag) throw DataError("acf: series shorter than max_lag");
  double m = 0;
  for (double v : x) m += v;
  m /= static_cast<double>(n);
  double c0 = 0;
  for (double v : x) c0 += (v - m) * (v - m);
  if (!(c0 > 0)) throw DataError("acf: constant series");
  std::vector<double> r(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double c = 0;
    for (std::size_t t = k; t < n; ++t) c += (x[t] - m) * (x[t - k] - m);
    r[k] = c / c0;
  }
  return r;
}

/// (acf_corrected(k) - acf_ref(k))^2 for k = 1..max_lag.
inline std::vector<double> acf_sq_diff(std::span<const double> corrected, std::span<const double> ref,
                                       std::size_t max_lag = 365) {
  if (corrected.size() <= max_lag + 30 || ref.size() <= max_lag + 30)
    throw DataError("acf_sq_diff: series length must exceed max_lag + 30");
  const auto a = acf(corrected, max_lag), b = acf(ref, max_lag);
  std::vector<double> out(max_lag);
  for (std::size_t k = 1; k <= max_lag; ++k) out[k - 1] = (a[k] - b[k]) * (a[k] - b[k]);
  return out;
}

// ----------------------------------------------------------- bootstrap

struct YearBlock {
  int year;
  std::vector<std::size_t> rows;
};

/// Calendar years wholly inside the panel. The first and last years are
/// dropped when the panel starts after 1 January or ends before 31 December.
inline std::vector<YearBlock> whole_years(const PanelDataset& p, std::size_t* dropped = nullptr) {
  std::vector<YearBlock> years;
  for (std::size_t t = 0; t < p.n_time(); ++t) {
    const int y = year_of(p.dates[t]);
    if (years.empty() || years.back().year != y) years.push_back({y, {}});
    years.back().rows.push_back(t);
  }
  std::size_t cut = 0;
  if (!years.empty() && p.dates.back() != make_date(years.back().year, 12, 31)) years.pop_back(), ++cut;
  if (!years.empty() && p.dates.front() != make_date(years.front().year, 1, 1)) years.erase(years.begin()), ++cut;
  if (dropped) *dropped = cut;
  return years;
}

struct BootstrapReplicate {
  std::vector<int> years;          // source years in draw order
  std::vector<std::size_t> rows;   // source row of each replicate row
  PanelDataset panel;
};

/// Concatenates n_blocks whole years drawn with replacement, the same rows
/// for every column.
inline BootstrapReplicate resample_years(const PanelDataset& p, const std::vector<YearBlock>& years,
                                         const std::vector<std::size_t>& picks) {
  BootstrapReplicate r;
  for (std::size_t k : picks) {
    r.years.push_back(years[k].year);
    r.rows.insert(r.rows.end(), years[k].rows.begin(), years[k].rows.end());
  }
  r.panel = p.select_rows(r.rows);
  return r;
}

inline std::vector<std::size_t> draw_year_positions(std::size_t n_years, std::size_t n_blocks, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> picks(n_blocks);
  for (auto& k : picks) k = static_cast<std::size_t>(rng.below(n_years));
  return picks;
}

inline std::vector<BootstrapReplicate> block_bootstrap(const PanelDataset& p, std::size_t n_blocks, std::size_t n_rep,
                                                       std::uint64_t seed, std::size_t* dropped_years = nullptr) {
  const auto years = whole_years(p, dropped_years);
  if (years.size() < 2) throw DataError("block_bootstrap: panel spans fewer than two whole years");
  if (n_blocks == 0) throw ConfigError("block_bootstrap: n_blocks must be positive");
  std::vector<BootstrapReplicate> out;
  for (std::size_t r = 0; r < n_rep; ++r)
    out.push_back(resample_years(p, years, draw_year_positions(years.size(), n_blocks, derive_seed(seed, r))));
  return out;
}

// ------------------------------------------------------------- report

struct EvalOptions {
  std::size_t max_lag = 365;
  SpatialMode spatial_mode = SpatialMode::pairwise;
  std::optional<GridAdjacency> adjacency;  // all pairs at radius 1 when absent
  W2Options w2;
  std::size_t n_rep = 0;  // 0 evaluates the panels as given
  std::size_t n_blocks = 20;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct MethodMetrics {
  std::string method;
  std::optional<double> joint_improvement;                      // all d*s columns
  std::vector<std::optional<double>> intervar_improvement;      // per location, d columns
  std::vector<std::optional<double>> spatial_improvement;       // per variable, s columns
  std::vector<std::optional<double>> spatial_corr_mse;          // per variable
  std::vector<std::vector<double>> acf_sq_diff;                 // per column (variable-major), lags 1..max_lag
  double acf_mse = 0;                                           // mean over columns and lags
};

struct EvalReport {
  std::size_t replicate = 0;  // 0 when no bootstrap
  std::vector<int> years;
  std::vector<MethodMetrics> methods;
  bool w2_subsampled = false;
  std::size_t dropped_years = 0;
};

namespace detail {

inline Matrix columns(const Matrix& v, const std::vector<std::size_t>& cols) {
  Matrix out(v.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = v.col(static_cast<Eigen::Index>(cols[k]));
  return out;
}

inline MethodMetrics metrics_for(const std::string& name, const PanelDataset& ref, const PanelDataset& raw,
                                 const PanelDataset& x, const RadiusBins& bins, const EvalOptions& opt, bool& sub,
                                 std::map<std::uint64_t, double>& base_w2) {
  const std::size_t d = ref.n_vars(), s = ref.n_locs();
  MethodMetrics m;
  m.method = name;
  auto imp = [&](const std::vector<std::size_t>& cols, std::uint64_t stream) {
    W2Options w = opt.w2;
    w.seed = derive_seed(opt.w2.seed, stream);
    const Matrix r = columns(ref.values, cols), a = columns(raw.values, cols), c = columns(x.values, cols);
    auto it = base_w2.find(stream);
    if (it == base_w2.end()) it = base_w2.emplace(stream, wasserstein2_detail(r, a, w).distance).first;
    const double base = it->second;
    const auto corr = wasserstein2_detail(r, c, w);
    sub = sub || corr.subsampled;
    return base == 0.0 ? std::nullopt : std::optional<double>((base - corr.distance) / base);
  };
  std::vector<std::size_t> all(d * s);
  std::iota(all.begin(), all.end(), 0);
  m.joint_improvement = imp(all, 0);
  for (std::size_t j = 0; j < s; ++j) {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < d; ++i) cols.push_back(ref.col(i, j));
    m.intervar_improvement.push_back(d > 1 ? imp(cols, 1 + j) : std::nullopt);
  }
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < s; ++j) cols.push_back(ref.col(i, j));
    m.spatial_improvement.push_back(s > 1 ? imp(cols, 1 + s + i) : std::nullopt);
    if (s > 1) {
      const auto a = spatial_correlation(x, i, bins, opt.spatial_mode), b = spatial_correlation(ref, i, bins, opt.spatial_mode);
      m.spatial_corr_mse.push_back(a.radii == b.radii && !b.radii.empty() ? std::optional(spatial_corr_mse(a, b)) : std::nullopt);
    } else {
      m.spatial_corr_mse.push_back(std::nullopt);
    }
  }
  double acc = 0;
  for (std::size_t c = 0; c < d * s; ++c) {
    const auto xc = x.values.col(static_cast<Eigen::Index>(c)), rc = ref.values.col(static_cast<Eigen::Index>(c));
    m.acf_sq_diff.push_back(acf_sq_diff(std::span<const double>(xc.data(), static_cast<std::size_t>(xc.size())),
                                        std::span<const double>(rc.data(), static_cast<std::size_t>(rc.size())), opt.max_lag));
    for (double v : m.acf_sq_diff.back()) acc += v;
  }
  m.acf_mse = acc / static_cast<double>(d * s * opt.max_lag);
  return m;
}

}  // namespace detail

/// Compares corrected panels with the reference; `raw` is the uncorrected
/// model output and is reported as method "raw". With n_rep > 0 every panel
/// is resampled with the same year positions per replicate.
inline std::vector<EvalReport> evaluate(const PanelDataset& ref, const PanelDataset& raw,
                                        const std::vector<std::pair<std::string, PanelDataset>>& corrected,
                                        const EvalOptions& opt = {}) {
  ref.check();
  auto same_shape = [&](const PanelDataset& p, const std::string& name) {
    p.check();
    if (p.n_vars() != ref.n_vars() || p.n_locs() != ref.n_locs() || p.n_time() != ref.n_time())
      throw DataError("evaluate: panel '" + name + "' does not match the reference shape");
  };
  same_shape(raw, "raw");
  for (const auto& [name, p] : corrected) same_shape(p, name);
  if (opt.adjacency && opt.adjacency->n_locs != ref.n_locs()) throw ConfigError("evaluate: adjacency size differs from panel");
  const RadiusBins bins = opt.adjacency ? shortest_path_bins(*opt.adjacency) : all_pairs_bin(ref.n_locs());

  struct Sample {
    std::size_t replicate;
    std::vector<int> years;
    std::vector<std::size_t> rows;
  };
  std::vector<Sample> samples;
  std::size_t dropped = 0;
  if (opt.n_rep == 0) {
    std::vector<std::size_t> rows(ref.n_time());
    std::iota(rows.begin(), rows.end(), 0);
    samples.push_back({0, {}, rows});
  } else {
    const auto years = whole_years(ref, &dropped);
    if (years.size() < 2) throw DataError("evaluate: bootstrap needs at least two whole years");
    for (std::size_t r = 0; r < opt.n_rep; ++r) {
      const auto rep = resample_years(ref, years, draw_year_positions(years.size(), opt.n_blocks, derive_seed(opt.seed, r)));
      samples.push_back({r + 1, rep.years, rep.rows});
    }
  }
  std::vector<EvalReport> out(samples.size());
  parallel_for(samples.size(), opt.threads, [&](std::size_t k) {
    const auto& smp = samples[k];
    const bool whole = opt.n_rep == 0;
    const PanelDataset r = whole ? ref : ref.select_rows(smp.rows);
    const PanelDataset a = whole ? raw : raw.select_rows(smp.rows);
    EvalReport rep;
    rep.replicate = smp.replicate;
    rep.years = smp.years;
    rep.dropped_years = dropped;
    bool sub = false;
    std::map<std::uint64_t, double> base_w2;
    rep.methods.push_back(detail::metrics_for("raw", r, a, a, bins, opt, sub, base_w2));
    for (const auto& [name, p] : corrected)
      rep.methods.push_back(detail::metrics_for(name, r, a, whole ? p : p.select_rows(smp.rows), bins, opt, sub, base_w2));
    rep.w2_subsampled = sub;
    out[k] = std::move(rep);
  });
  return out;
}

}  // namespace vinebc
