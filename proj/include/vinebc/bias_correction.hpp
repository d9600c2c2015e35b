#pragma once

// Bias-correction methods.
//
//   qm      empirical quantile mapping per column
//   vbc     rank PITs, one vine per location, margins from qm
//   g_vbc   GAM PITs, one vine per location, mean-delta adjustment
//   n_vbc   rank PITs, nested vine over all d*s columns, margins from qm
//   gn_vbc  GAM PITs, nested vine, mean-delta adjustment
//
// The vine methods align the projection-period model PITs with the
// reference dependence: U~ = R_rc^{-1}(R_mp(U_mp)).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vinebc/core.hpp"
#include "vinebc/gam.hpp"
#include "vinebc/nvc_merge.hpp"
#include "vinebc/panel.hpp"
#include "vinebc/stats.hpp"
#include "vinebc/vine_model.hpp"

namespace vinebc {

enum class Method { qm, vbc, g_vbc, n_vbc, gn_vbc };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::qm: return "qm";
    case Method::vbc: return "vbc";
    case Method::g_vbc: return "g_vbc";
    case Method::n_vbc: return "n_vbc";
    case Method::gn_vbc: return "gn_vbc";
  }
  return "?";
}

inline Method method_from_string(std::string_view s) {
  for (Method m : {Method::qm, Method::vbc, Method::g_vbc, Method::n_vbc, Method::gn_vbc})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "' (qm, vbc, g_vbc, n_vbc, gn_vbc)");
}

inline bool uses_gam(Method m) { return m == Method::g_vbc || m == Method::gn_vbc; }
inline bool uses_nvc(Method m) { return m == Method::n_vbc || m == Method::gn_vbc; }
inline bool uses_vine(Method m) { return m != Method::qm; }

enum class QmPooling { pooled, monthly };

struct BcConfig {
  Method method = Method::gn_vbc;
  /// 1-based; required for n_vbc and gn_vbc.
  std::size_t bridging_location = 0;
  int truncation = 22;
  FitPairOptions pair;
  GamOptions gam;
  /// Per variable; empty uses each panel variable's family tag, else gaussian.
  std::vector<MarginFamily> families;
  SeasonClock clock = SeasonClock::day_of_year;
  /// KS level for re-uniformizing GAM PITs; 0 disables.
  double reuniformize_level = 0.01;
  DeltaScale delta_scale = DeltaScale::link;
  QmPooling qm_pooling = QmPooling::pooled;
  /// First-tree whitelist for the location vines of the nested methods.
  std::optional<GridAdjacency> adjacency;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Keep the PIT and aligned matrices in the result.
  bool keep_intermediates = false;

  void check() const {
    if (uses_nvc(method) && bridging_location == 0) throw ConfigError("bridging_location is required for " + std::string(to_string(method)));
    if (!uses_nvc(method) && bridging_location != 0)
      throw ConfigError("bridging_location only applies to n_vbc and gn_vbc");
    if (truncation < 0) throw ConfigError("truncation must be non-negative");
    if (threads == 0) throw ConfigError("threads must be positive");
  }
};

inline constexpr std::size_t kMinQmPoints = 30;

// ---------------------------------------------------------------- QM

namespace detail {

// Sorted unique values with the mean Hazen position of their ties.
struct EmpiricalScale {
  std::vector<double> x, p;
};

inline EmpiricalScale hazen_positions(std::span<const double> v) {
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  EmpiricalScale out;
  for (std::size_t k = 0; k < s.size();) {
    std::size_t e = k;
    while (e + 1 < s.size() && s[e + 1] == s[k]) ++e;
    const double mid_rank = 0.5 * (static_cast<double>(k) + static_cast<double>(e)) + 1.0;
    out.x.push_back(s[k]);
    out.p.push_back((mid_rank - 0.5) / n);
    k = e + 1;
  }
  return out;
}

inline double interp_clamped(const std::vector<double>& from, const std::vector<double>& to, double v, bool& tail) {
  if (v < from.front()) return tail = true, to.front();
  if (v > from.back()) return tail = true, to.back();
  if (from.size() == 1) return to.front();
  const auto it = std::upper_bound(from.begin(), from.end(), v);
  if (it == from.end()) return to.back();
  const std::size_t k = static_cast<std::size_t>(it - from.begin());
  const double t = (v - from[k - 1]) / (from[k] - from[k - 1]);
  return to[k - 1] + t * (to[k] - to[k - 1]);
}

}  // namespace detail

/// Empirical quantile mapping x -> Q_rc(F_mc(x)): Hazen positions (k - 0.5)/n,
/// linear interpolation, constant beyond the calibration range.
class QuantileMap {
 public:
  QuantileMap(std::span<const double> rc, std::span<const double> mc) {
    if (rc.size() < kMinQmPoints || mc.size() < kMinQmPoints)
      throw DataError("quantile mapping needs at least " + std::to_string(kMinQmPoints) + " calibration points");
    rc_ = detail::hazen_positions(rc);
    mc_ = detail::hazen_positions(mc);
  }

  double operator()(double x, bool* tail = nullptr) const {
    bool t1 = false, t2 = false;
    const double p = detail::interp_clamped(mc_.x, mc_.p, x, t1);
    const double y = detail::interp_clamped(rc_.p, rc_.x, p, t2);
    if (tail) *tail = t1;
    return y;
  }

 private:
  detail::EmpiricalScale rc_, mc_;
};

/// Empirical quantile at positions rank / (n + 1), the inverse of rank_pit.
class RankQuantile {
 public:
  explicit RankQuantile(std::span<const double> v) : x_(v.begin(), v.end()) {
    if (x_.empty()) throw DataError("empty sample");
    std::sort(x_.begin(), x_.end());
  }
  double operator()(double u) const {
    const double r = std::clamp(u * static_cast<double>(x_.size() + 1), 1.0, static_cast<double>(x_.size()));
    const auto k = static_cast<std::size_t>(std::floor(r));
    if (k >= x_.size()) return x_.back();
    return x_[k - 1] + (r - static_cast<double>(k)) * (x_[k] - x_[k - 1]);
  }

 private:
  std::vector<double> x_;
};

// ------------------------------------------------------------ diagnostics

struct GamDiagnostics {
  std::string variable;
  std::string dataset;
  std::string family;
  double lambda = 0, edf = 0, dispersion = 0;
  int iterations = 0;
};

struct VineSummary {
  std::string dataset;  // rc / mp, with the location for per-location vines
  std::size_t dimension = 0;
  int truncation = 0;
  std::size_t edges = 0;
  std::size_t dependent_edges = 0;
  std::size_t bridges = 0;
};

struct BcDiagnostics {
  std::string method;
  std::string pit;         // gam / rank / none
  std::string dependence;  // nvc / per_location / none
  std::vector<std::string> stages;
  std::uint64_t seed = 0;
  std::size_t qm_tail_hits = 0;
  std::size_t delta_clamps = 0;
  std::size_t reuniformized_columns = 0;
  std::vector<GamDiagnostics> gam;
  std::vector<VineSummary> vines;
  std::map<std::string, double> timings_ms;
};

struct BcResult {
  PanelDataset corrected;
  BcDiagnostics diagnostics;
  // with keep_intermediates
  Matrix u_rc, u_mp, w_mp, u_aligned;
};

namespace detail {

template <typename F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(stage + ": " + e.what());
  } catch (const DomainError& e) {
    throw NumericalError(stage + ": " + e.what());
  }
}

inline void check_compatible(const PanelDataset& a, const PanelDataset& b, const char* name) {
  a.check();
  b.check();
  if (a.n_vars() != b.n_vars() || a.n_locs() != b.n_locs()) throw DataError(std::string(name) + " panel shape differs from rc");
  for (std::size_t i = 0; i < a.n_vars(); ++i)
    if (a.variables[i].name != b.variables[i].name) throw DataError(std::string(name) + " variables differ from rc");
  for (std::size_t j = 0; j < a.n_locs(); ++j)
    if (a.locations[j].id != b.locations[j].id) throw DataError(std::string(name) + " locations differ from rc");
}

inline std::vector<double> column(const PanelDataset& p, std::size_t k) {
  const auto c = p.values.col(static_cast<Eigen::Index>(k));
  return {c.data(), c.data() + c.size()};
}

class Timer {
 public:
  Timer(std::map<std::string, double>& sink, std::string name)
      : sink_(sink), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    sink_[name_] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::map<std::string, double>& sink_;
  std::string name_;
  std::chrono::steady_clock::time_point start_;
};

inline VineSummary summarize(const VineModel& m, std::string name) {
  VineSummary v;
  v.dataset = std::move(name);
  v.dimension = m.dimension();
  v.truncation = m.truncation();
  for (std::size_t t = 0; t < m.copulas().size(); ++t)
    for (std::size_t k = 0; k < m.copulas()[t].size(); ++k) {
      ++v.edges;
      if (m.copulas()[t][k].family != Family::independence) ++v.dependent_edges;
      if (m.structure().levels[t][k].bridge) ++v.bridges;
    }
  return v;
}

}  // namespace detail

/// Empirical quantile mapping of every mp column (pooled or by calendar month).
inline PanelDataset run_qm(const PanelDataset& rc, const PanelDataset& mc, const PanelDataset& mp,
                           QmPooling pooling = QmPooling::pooled, std::size_t* tail_hits = nullptr) {
  detail::check_compatible(rc, mc, "mc");
  detail::check_compatible(rc, mp, "mp");
  PanelDataset out = mp;
  out.period = Period::mp;
  std::size_t tails = 0;
  auto month = [](Date d) { return static_cast<unsigned>(std::chrono::year_month_day{d}.month()); };
  for (Eigen::Index k = 0; k < mp.values.cols(); ++k) {
    const unsigned groups = pooling == QmPooling::pooled ? 1 : 12;
    for (unsigned g = 1; g <= groups; ++g) {
      auto pick = [&](const PanelDataset& p) {
        std::vector<double> v;
        std::vector<Eigen::Index> rows;
        for (std::size_t t = 0; t < p.n_time(); ++t)
          if (groups == 1 || month(p.dates[t]) == g) v.push_back(p.values(static_cast<Eigen::Index>(t), k)), rows.push_back(static_cast<Eigen::Index>(t));
        return std::make_pair(v, rows);
      };
      const auto [vp, rows] = pick(mp);
      if (vp.empty()) continue;
      const auto [vr, r1] = pick(rc);
      const auto [vm, r2] = pick(mc);
      const QuantileMap qm(vr, vm);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        bool tail = false;
        out.values(rows[r], k) = qm(vp[r], &tail);
        tails += tail;
      }
    }
  }
  if (tail_hits) *tail_hits = tails;
  return out;
}

/// Runs the configured method on calibration (rc, mc) and projection (mp)
/// panels and returns the corrected projection panel.
inline BcResult run_bias_correction(const PanelDataset& rc, const PanelDataset& mc, const PanelDataset& mp,
                                    const BcConfig& cfg) {
  cfg.check();
  detail::check_compatible(rc, mc, "mc");
  detail::check_compatible(rc, mp, "mp");
  const std::size_t d = rc.n_vars(), s = rc.n_locs(), ds = d * s;
  if (uses_nvc(cfg.method) && cfg.bridging_location > s)
    throw ConfigError("bridging_location must lie in 1.." + std::to_string(s));
  BcResult res;
  auto& diag = res.diagnostics;
  diag.method = std::string(to_string(cfg.method));
  diag.seed = cfg.seed;
  diag.pit = uses_gam(cfg.method) ? "gam" : uses_vine(cfg.method) ? "rank" : "none";
  diag.dependence = uses_nvc(cfg.method) ? "nvc" : uses_vine(cfg.method) ? "per_location" : "none";

  // empirical path margins
  PanelDataset qm_out;
  if (!uses_gam(cfg.method)) {
    diag.stages.push_back("qm");
    detail::Timer tm(diag.timings_ms, "qm");
    qm_out = detail::staged("qm", [&] { return run_qm(rc, mc, mp, cfg.qm_pooling, &diag.qm_tail_hits); });
    if (cfg.method == Method::qm) {
      res.corrected = std::move(qm_out);
      return res;
    }
  }

  // Model: PITs
  Matrix U_rc(static_cast<Eigen::Index>(rc.n_time()), static_cast<Eigen::Index>(ds));
  Matrix U_mp(static_cast<Eigen::Index>(mp.n_time()), static_cast<Eigen::Index>(ds));
  std::vector<GamFit> fits;  // index (i * 3 + dataset), dataset 0 rc, 1 mc, 2 mp
  std::vector<ReuniformMap> rc_maps(ds);
  if (uses_gam(cfg.method)) {
    diag.stages.push_back("gam_fit");
    diag.stages.push_back("gam_pit");
    detail::Timer tm(diag.timings_ms, "model");
    std::vector<MarginFamily> fam(d, MarginFamily::gaussian);
    if (!cfg.families.empty()) {
      if (cfg.families.size() != d) throw ConfigError("one marginal family per variable expected");
      fam = cfg.families;
    } else {
      for (std::size_t i = 0; i < d; ++i)
        if (!rc.variables[i].family.empty()) fam[i] = margin_family_from_string(rc.variables[i].family);
    }
    const PanelDataset* sets[3] = {&rc, &mc, &mp};
    const char* names[3] = {"rc", "mc", "mp"};
    fits.resize(3 * d);
    detail::staged("gam_fit", [&] {
      parallel_for(3 * d, cfg.threads, [&](std::size_t k) {
        const std::size_t i = k / 3, ds_ix = k % 3;
        fits[k] = fit_gam(gam_data(*sets[ds_ix], i, cfg.clock), rc.locations, fam[i], cfg.gam);
      });
      return 0;
    });
    for (std::size_t k = 0; k < 3 * d; ++k)
      diag.gam.push_back({rc.variables[k / 3].name, names[k % 3], std::string(to_string(fits[k].family)),
                          fits[k].mean.lambda, fits[k].mean.edf, fits[k].mean.dispersion, fits[k].mean.iterations});
    std::vector<std::size_t> reuni(2 * ds, 0);
    detail::staged("gam_pit", [&] {
      parallel_for(2 * d, cfg.threads, [&](std::size_t k) {
        const std::size_t i = k / 2;
        const bool is_mp = k % 2 == 1;
        const PanelDataset& p = is_mp ? mp : rc;
        const GamFit& f = fits[i * 3 + (is_mp ? 2 : 0)];
        Rng rng(derive_seed(cfg.seed, 2 * i + (is_mp ? 1 : 0)));
        const auto data = gam_data(p, i, cfg.clock);
        const auto u = pit(f, data, rng);
        Matrix& U = is_mp ? U_mp : U_rc;
        const std::size_t n = p.n_time();
        for (std::size_t j = 0; j < s; ++j) {
          const std::span<const double> col(u.data() + j * n, n);
          auto r = reuniformize(col, cfg.reuniformize_level);
          const std::size_t c = i * s + j;
          reuni[2 * c + (is_mp ? 1 : 0)] = r.map.active;
          for (std::size_t t = 0; t < n; ++t) U(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = r.u[t];
          if (!is_mp) rc_maps[c] = std::move(r.map);
        }
      });
      return 0;
    });
    for (auto x : reuni) diag.reuniformized_columns += x;
  } else {
    diag.stages.push_back("rank_pit");
    for (std::size_t c = 0; c < ds; ++c) {
      const auto a = rank_pit(detail::column(rc, c)), b = rank_pit(detail::column(mp, c));
      for (std::size_t t = 0; t < a.size(); ++t) U_rc(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = a[t];
      for (std::size_t t = 0; t < b.size(); ++t) U_mp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = b[t];
    }
  }

  // Model: dependence, then Align
  Matrix W(U_mp.rows(), U_mp.cols()), U_al(U_mp.rows(), U_mp.cols());
  if (uses_nvc(cfg.method)) {
    diag.stages.push_back("nvc_fit");
    diag.stages.push_back("align");
    detail::Timer tm(diag.timings_ms, "dependence");
    NvcOptions o;
    o.n_vars = d;
    o.n_locs = s;
    o.bridge_loc = cfg.bridging_location;
    o.truncation = cfg.truncation;
    o.fit.pair = cfg.pair;
    o.fit.threads = std::max(1u, cfg.threads / 2);
    if (cfg.adjacency) o.adjacency = cfg.adjacency->pairs();
    std::optional<NvcFit> f_rc, f_mp;
    detail::staged("nvc_fit", [&] {
      parallel_for(2, std::min(2u, cfg.threads), [&](std::size_t k) {
        if (k == 0) f_rc.emplace(nvc_fit(U_rc, o));
        else f_mp.emplace(nvc_fit(U_mp, o));
      });
      return 0;
    });
    diag.vines.push_back(detail::summarize(f_rc->model, "rc"));
    diag.vines.push_back(detail::summarize(f_mp->model, "mp"));
    detail::staged("align", [&] {
      W = f_mp->model.rosenblatt(U_mp, cfg.threads);
      U_al = f_rc->model.inverse_rosenblatt(W, cfg.threads);
      return 0;
    });
  } else {
    diag.stages.push_back("vine_fit");
    diag.stages.push_back("align");
    detail::Timer tm(diag.timings_ms, "dependence");
    std::vector<VineModel> m_rc(s), m_mp(s);
    detail::staged("vine_fit", [&] {
      parallel_for(2 * s, cfg.threads, [&](std::size_t k) {
        const std::size_t j = k / 2;
        const Matrix& U = k % 2 ? U_mp : U_rc;
        Matrix sub(U.rows(), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) sub.col(static_cast<Eigen::Index>(i)) = U.col(static_cast<Eigen::Index>(i * s + j));
        FitVineOptions fo;
        fo.pair = cfg.pair;
        fo.truncation = std::min<int>(cfg.truncation, static_cast<int>(d) - 1);
        (k % 2 ? m_mp : m_rc)[j] = fit_vine(sub, fo);
      });
      return 0;
    });
    for (std::size_t j = 0; j < s; ++j) {
      diag.vines.push_back(detail::summarize(m_rc[j], "rc:" + rc.locations[j].id));
      diag.vines.push_back(detail::summarize(m_mp[j], "mp:" + rc.locations[j].id));
    }
    detail::staged("align", [&] {
      for (std::size_t j = 0; j < s; ++j) {
        Matrix sub(U_mp.rows(), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < d; ++i) sub.col(static_cast<Eigen::Index>(i)) = U_mp.col(static_cast<Eigen::Index>(i * s + j));
        const Matrix w = m_mp[j].rosenblatt(sub, cfg.threads);
        const Matrix a = m_rc[j].inverse_rosenblatt(w, cfg.threads);
        for (std::size_t i = 0; i < d; ++i) {
          W.col(static_cast<Eigen::Index>(i * s + j)) = w.col(static_cast<Eigen::Index>(i));
          U_al.col(static_cast<Eigen::Index>(i * s + j)) = a.col(static_cast<Eigen::Index>(i));
        }
      }
      return 0;
    });
  }

  // Adjust
  PanelDataset out = mp;
  out.period = Period::mp;
  {
    detail::Timer tm(diag.timings_ms, "adjust");
    if (uses_gam(cfg.method)) {
      diag.stages.push_back("reuniformize_undo");
      diag.stages.push_back("delta_adjust");
      DeltaCounters cnt;
      const auto season = season_values(mp.dates, cfg.clock);
      detail::staged("delta_adjust", [&] {
        parallel_for(ds, cfg.threads, [&](std::size_t c) {
          const std::size_t i = c / s, j = c % s;
          for (std::size_t t = 0; t < mp.n_time(); ++t) {
            const auto ti = static_cast<Eigen::Index>(t);
            const double u = rc_maps[c].inverse(U_al(ti, static_cast<Eigen::Index>(c)));
            out.values(ti, static_cast<Eigen::Index>(c)) =
                inverse_pit_delta(u, fits[3 * i], fits[3 * i + 1], fits[3 * i + 2], season[t], j, cfg.delta_scale, &cnt);
          }
        });
        return 0;
      });
      diag.delta_clamps = cnt.clamps.load();
    } else {
      diag.stages.push_back("margin_map");
      for (std::size_t c = 0; c < ds; ++c) {
        const RankQuantile q(detail::column(qm_out, c));
        for (Eigen::Index t = 0; t < U_al.rows(); ++t) out.values(t, static_cast<Eigen::Index>(c)) = q(U_al(t, static_cast<Eigen::Index>(c)));
      }
    }
  }
  if (cfg.keep_intermediates) {
    res.u_rc = std::move(U_rc);
    res.u_mp = std::move(U_mp);
    res.w_mp = std::move(W);
    res.u_aligned = std::move(U_al);
  }
  res.corrected = std::move(out);
  return res;
}

}  // namespace vinebc
