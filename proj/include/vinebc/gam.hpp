#pragma once

// Penalized-spline GAMs for the marginal mean structure.
//
// g(mu) = f(season, location), f a tensor product of a cyclic cubic
// B-spline basis in the season clock and a spatial basis over the sites
// (constant, lat, lon and thin-plate radial terms). Fitted by penalized
// IRLS with the smoothing parameter chosen by GCV. PITs, randomized at the
// hurdle atom, and the inverse PIT with the link-scale mean delta live here
// too, as does the rank re-uniformization of PIT series.

#include <array>
#include <atomic>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "vinebc/core.hpp"
#include "vinebc/panel.hpp"
#include "vinebc/stats.hpp"

namespace vinebc {

enum class MarginFamily { gaussian, gamma, beta, hurdle_gamma };

inline std::string_view to_string(MarginFamily f) {
  switch (f) {
    case MarginFamily::gaussian: return "gaussian";
    case MarginFamily::gamma: return "gamma";
    case MarginFamily::beta: return "beta";
    case MarginFamily::hurdle_gamma: return "hurdle_gamma";
  }
  return "?";
}

inline MarginFamily margin_family_from_string(std::string_view s) {
  if (s == "gaussian" || s == "normal") return MarginFamily::gaussian;
  if (s == "gamma") return MarginFamily::gamma;
  if (s == "beta") return MarginFamily::beta;
  if (s == "hurdle_gamma") return MarginFamily::hurdle_gamma;
  throw ConfigError("unknown marginal family '" + std::string(s) + "'");
}

// ------------------------------------------------------------------ bases

namespace detail {

// Uniform cubic B-spline on [0, 4).
inline double cubic_bspline(double u) {
  if (u < 0.0 || u >= 4.0) return 0.0;
  if (u < 1.0) return u * u * u / 6.0;
  if (u < 2.0) return (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0;
  if (u < 3.0) return (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0;
  const double w = 4.0 - u;
  return w * w * w / 6.0;
}

}  // namespace detail

/// K cyclic cubic B-splines with equally spaced knots on [0, period).
struct CyclicBasis {
  int k = 10;
  double period = 365.25;

  /// The 4 non-zero basis functions at x: indices and values.
  void eval(double x, std::array<int, 4>& idx, std::array<double, 4>& val) const {
    const double h = period / k;
    double s = std::fmod(x, period);
    if (s < 0) s += period;
    const double pos = s / h;
    const int cell = std::min(static_cast<int>(std::floor(pos)), k - 1);
    const double frac = pos - cell;
    // B_m(x) = N(pos - m + 3) for m = cell - 3 .. cell (mod k)
    for (int r = 0; r < 4; ++r) {
      const int m = cell - r;
      idx[static_cast<std::size_t>(r)] = ((m % k) + k) % k;
      val[static_cast<std::size_t>(r)] = detail::cubic_bspline(frac + r);
    }
  }

  Eigen::VectorXd dense(double x) const {
    std::array<int, 4> idx;
    std::array<double, 4> val;
    eval(x, idx, val);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (int r = 0; r < 4; ++r) b(idx[static_cast<std::size_t>(r)]) += val[static_cast<std::size_t>(r)];
    return b;
  }

  /// Cyclic second-difference penalty D'D.
  Eigen::MatrixXd penalty() const {
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) {
      D(i, (i + k - 1) % k) += 1.0;
      D(i, i) -= 2.0;
      D(i, (i + 1) % k) += 1.0;
    }
    return D.transpose() * D;
  }
};

/// Spatial basis evaluated at the s sites (rows) with its penalty.
struct SpaceBasis {
  Eigen::MatrixXd B;  // s x ks
  Eigen::MatrixXd S;  // ks x ks
  std::size_t cols() const { return static_cast<std::size_t>(B.cols()); }
};

/// Columns 1, lat, lon and r^2 log r radial terms at up to k - 3 sites,
/// kept in that order when linearly independent of those before. Radial
/// coefficients carry a ridge penalty. Sites without coordinates are placed
/// on a line by index.
inline SpaceBasis make_space_basis(const std::vector<Location>& locs, std::size_t k) {
  const std::size_t s = locs.size();
  if (s == 0) throw DataError("space basis: no locations");
  k = std::max<std::size_t>(1, std::min(k, s));
  std::vector<double> x(s), y(s);
  const bool have = std::all_of(locs.begin(), locs.end(),
                                [](const Location& l) { return std::isfinite(l.lat) && std::isfinite(l.lon); });
  for (std::size_t j = 0; j < s; ++j) {
    x[j] = have ? locs[j].lon : static_cast<double>(j);
    y[j] = have ? locs[j].lat : 0.0;
  }
  auto standardize = [&](std::vector<double>& v) {
    const double m = mean(v);
    const double sd = std::sqrt(variance(v) * (s > 1 ? static_cast<double>(s - 1) / s : 1.0));
    for (auto& t : v) t = sd > 0 ? (t - m) / sd : 0.0;
  };
  if (s > 1) {
    standardize(x);
    standardize(y);
  }
  std::vector<Eigen::VectorXd> cand;
  std::vector<bool> radial;
  cand.push_back(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s)));
  radial.push_back(false);
  for (const auto* v : {&y, &x}) {
    cand.push_back(Eigen::Map<const Eigen::VectorXd>(v->data(), static_cast<Eigen::Index>(s)));
    radial.push_back(false);
  }
  // evenly spread centres first, the remaining sites as spares for dropped columns
  const std::size_t n_rad = k > 3 ? k - 3 : 0;
  std::vector<std::size_t> centres;
  std::vector<bool> used(s, false);
  for (std::size_t c = 0; c < n_rad; ++c) {
    const std::size_t j = c * s / n_rad;
    if (!used[j]) used[j] = true, centres.push_back(j);
  }
  for (std::size_t j = 0; j < s && n_rad > 0; ++j)
    if (!used[j]) centres.push_back(j);
  for (std::size_t centre : centres) {
    Eigen::VectorXd col(static_cast<Eigen::Index>(s));
    for (std::size_t j = 0; j < s; ++j) {
      const double r = std::hypot(x[j] - x[centre], y[j] - y[centre]);
      col(static_cast<Eigen::Index>(j)) = r > 0 ? r * r * std::log(r) : 0.0;
    }
    const double rms = col.norm() / std::sqrt(static_cast<double>(s));
    if (rms > 0) col /= rms;
    cand.push_back(col);
    radial.push_back(true);
  }
  std::vector<Eigen::VectorXd> basis, ortho;
  std::vector<bool> pen;
  for (std::size_t c = 0; c < cand.size() && basis.size() < k; ++c) {
    Eigen::VectorXd r = cand[c];
    for (const auto& q : ortho) r -= q.dot(r) * q;
    if (r.norm() <= 1e-8 * std::max(1.0, cand[c].norm())) continue;
    ortho.push_back(r / r.norm());
    basis.push_back(cand[c]);
    pen.push_back(radial[c]);
  }
  SpaceBasis sb;
  sb.B.resize(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(basis.size()));
  sb.S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(basis.size()), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t c = 0; c < basis.size(); ++c) {
    sb.B.col(static_cast<Eigen::Index>(c)) = basis[c];
    if (pen[c]) sb.S(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) = 1.0;
  }
  return sb;
}

// ------------------------------------------------------------ link families

/// Exponential-family pieces used by IRLS. `binomial` is internal (hurdle
/// wet/dry part).
enum class LinkFamily { gaussian, gamma, beta, binomial };

namespace detail {

inline constexpr double kMuEps = 1e-10;

inline double link_inverse(LinkFamily f, double eta) {
  switch (f) {
    case LinkFamily::gaussian: return eta;
    case LinkFamily::gamma: return std::exp(std::clamp(eta, -700.0, 700.0));
    case LinkFamily::beta:
    case LinkFamily::binomial: return std::clamp(1.0 / (1.0 + std::exp(-eta)), kMuEps, 1.0 - kMuEps);
  }
  return eta;
}

// eta beyond the range where link_inverse is exact (it clamps there)
inline bool link_saturates(LinkFamily f, double eta) {
  switch (f) {
    case LinkFamily::gaussian: return false;
    case LinkFamily::gamma: return std::abs(eta) > 700.0;
    case LinkFamily::beta:
    case LinkFamily::binomial: return std::abs(eta) > std::log((1.0 - kMuEps) / kMuEps);
  }
  return false;
}

inline double link(LinkFamily f, double mu) {
  switch (f) {
    case LinkFamily::gaussian: return mu;
    case LinkFamily::gamma: return std::log(mu);
    case LinkFamily::beta:
    case LinkFamily::binomial: return std::log(mu / (1.0 - mu));
  }
  return mu;
}

// IRLS weight and working response for one observation.
inline void working(LinkFamily f, double y, double eta, double& w, double& z) {
  const double mu = link_inverse(f, eta);
  switch (f) {
    case LinkFamily::gaussian: w = 1.0, z = y; return;
    case LinkFamily::gamma: w = 1.0, z = eta + (y - mu) / mu; return;
    case LinkFamily::beta:
    case LinkFamily::binomial: {
      const double v = mu * (1.0 - mu);
      w = v, z = eta + (y - mu) / v;
      return;
    }
  }
}

inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

inline double unit_deviance(LinkFamily f, double y, double mu) {
  switch (f) {
    case LinkFamily::gaussian: return (y - mu) * (y - mu);
    case LinkFamily::gamma: return 2.0 * (-std::log(y / mu) + (y - mu) / mu);
    case LinkFamily::beta:
    case LinkFamily::binomial:
      return 2.0 * (xlogy(y, y / mu) + xlogy(1.0 - y, (1.0 - y) / (1.0 - mu)));
  }
  return 0.0;
}

inline double variance_fn(LinkFamily f, double mu) {
  switch (f) {
    case LinkFamily::gaussian: return 1.0;
    case LinkFamily::gamma: return mu * mu;
    case LinkFamily::beta:
    case LinkFamily::binomial: return mu * (1.0 - mu);
  }
  return 1.0;
}

inline double initial_mu(LinkFamily f, double y) {
  switch (f) {
    case LinkFamily::gaussian: return y;
    case LinkFamily::gamma: return y;
    case LinkFamily::beta: return std::clamp(y, 1e-4, 1.0 - 1e-4);
    case LinkFamily::binomial: return (y + 0.5) / 2.0;
  }
  return y;
}

}  // namespace detail

/// One fitted penalized GLM on the tensor basis.
struct GamComponent {
  LinkFamily family = LinkFamily::gaussian;
  Eigen::VectorXd coef;  // index: space column * k_time + time column
  double lambda = 0.0;
  double dispersion = 1.0;
  double edf = 0.0;
  double deviance = 0.0;
  double gcv = 0.0;
  int iterations = 0;
  /// Bayesian posterior covariance of coef, (X'WX + lambda S)^-1 * dispersion.
  /// Not stored in GAM files.
  Eigen::MatrixXd vcov;
};

struct GamOptions {
  int k_time = 10;
  /// <= 0: min(s, 20).
  int k_space = 0;
  double period = 365.25;
  /// Fixed smoothing parameter; otherwise GCV over `lambda_grid`.
  std::optional<double> lambda;
  std::vector<double> lambda_grid{1e-3, 3.16e-3, 1e-2, 3.16e-2, 1e-1, 3.16e-1, 1.0,
                                  3.16, 10.0, 31.6, 100.0, 316.0, 1000.0};
  int max_iter = 100;
  double tol = 1e-8;
  /// Enforce n >= 10 * (k_time + k_space).
  bool check_size = true;
};

/// Rows of one variable across locations: response, season clock, site index.
struct GamData {
  std::vector<double> y;
  std::vector<double> season;
  std::vector<std::size_t> loc;
  std::size_t size() const { return y.size(); }
};

enum class SeasonClock { day_of_year, epoch_days };

/// Season clock value per date: day_of_year - 1, or days since 1970-01-01
/// (reduced modulo the period by the basis).
inline std::vector<double> season_values(const std::vector<Date>& dates, SeasonClock clock) {
  std::vector<double> out;
  out.reserve(dates.size());
  for (Date d : dates)
    out.push_back(clock == SeasonClock::day_of_year ? static_cast<double>(day_of_year(d) - 1)
                                                    : static_cast<double>(epoch_days(d)));
  return out;
}

/// The rows of variable i of a panel, time-major within location blocks.
inline GamData gam_data(const PanelDataset& p, std::size_t i, SeasonClock clock) {
  GamData g;
  const auto season = season_values(p.dates, clock);
  for (std::size_t j = 0; j < p.n_locs(); ++j)
    for (std::size_t t = 0; t < p.n_time(); ++t) {
      g.y.push_back(p(t, i, j));
      g.season.push_back(season[t]);
      g.loc.push_back(j);
    }
  return g;
}

struct GamFit {
  MarginFamily family = MarginFamily::gaussian;
  CyclicBasis time;
  SpaceBasis space;
  GamComponent mean;                   // the mean, or the positive part for hurdle_gamma
  std::optional<GamComponent> wet;     // hurdle_gamma: P(y > 0)

  double eta(const GamComponent& c, double season, std::size_t loc) const {
    if (loc >= static_cast<std::size_t>(space.B.rows())) throw DataError("GAM: unknown location index");
    std::array<int, 4> idx;
    std::array<double, 4> val;
    time.eval(season, idx, val);
    const Eigen::Index kt = time.k;
    double out = 0.0;
    for (Eigen::Index a = 0; a < space.B.cols(); ++a) {
      const double bs = space.B(static_cast<Eigen::Index>(loc), a);
      if (bs == 0.0) continue;
      double inner = 0.0;
      for (int r = 0; r < 4; ++r) inner += val[static_cast<std::size_t>(r)] * c.coef(a * kt + idx[static_cast<std::size_t>(r)]);
      out += bs * inner;
    }
    return out;
  }

  double eta(double season, std::size_t loc) const { return eta(mean, season, loc); }

  /// Standard error of the linear predictor; 0 when no covariance is held.
  double eta_se(const GamComponent& c, double season, std::size_t loc) const {
    if (loc >= static_cast<std::size_t>(space.B.rows())) throw DataError("GAM: unknown location index");
    if (c.vcov.size() == 0) return 0.0;
    std::array<int, 4> idx;
    std::array<double, 4> val;
    time.eval(season, idx, val);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(c.coef.size());
    const Eigen::Index kt = time.k;
    for (Eigen::Index a = 0; a < space.B.cols(); ++a)
      for (int r = 0; r < 4; ++r)
        x(a * kt + idx[static_cast<std::size_t>(r)]) += space.B(static_cast<Eigen::Index>(loc), a) * val[static_cast<std::size_t>(r)];
    return std::sqrt(std::max(0.0, x.dot(c.vcov * x)));
  }
  double eta_se(double season, std::size_t loc) const { return eta_se(mean, season, loc); }
  double mu(double season, std::size_t loc) const { return detail::link_inverse(mean.family, eta(season, loc)); }

  /// P(y = 0) for hurdle_gamma, else 0.
  double p_zero(double season, std::size_t loc) const {
    if (!wet) return 0.0;
    return 1.0 - detail::link_inverse(LinkFamily::binomial, eta(*wet, season, loc));
  }
};

namespace detail {

struct Prepared {
  std::vector<std::array<int, 4>> idx;
  std::vector<std::array<double, 4>> val;
};

inline Prepared prepare_rows(const CyclicBasis& tb, const GamData& d) {
  Prepared p;
  p.idx.resize(d.size());
  p.val.resize(d.size());
  for (std::size_t r = 0; r < d.size(); ++r) tb.eval(d.season[r], p.idx[r], p.val[r]);
  return p;
}

inline void eta_all(const CyclicBasis& tb, const SpaceBasis& sb, const Prepared& pr, const GamData& d,
                    const Eigen::VectorXd& coef, std::vector<double>& eta) {
  const Eigen::Index kt = tb.k, ks = sb.B.cols();
  const Eigen::Map<const Eigen::MatrixXd> C(coef.data(), kt, ks);
  const Eigen::MatrixXd per_site = C * sb.B.transpose();  // kt x s
  eta.resize(d.size());
  for (std::size_t r = 0; r < d.size(); ++r) {
    double e = 0.0;
    for (int q = 0; q < 4; ++q)
      e += pr.val[r][static_cast<std::size_t>(q)] * per_site(pr.idx[r][static_cast<std::size_t>(q)], static_cast<Eigen::Index>(d.loc[r]));
    eta[r] = e;
  }
}

// X'WX and X'Wz through per-site Gram blocks of the time basis.
inline void normal_equations(const CyclicBasis& tb, const SpaceBasis& sb, const Prepared& pr, const GamData& d,
                             const std::vector<double>& w, const std::vector<double>& z, Eigen::MatrixXd& XtWX,
                             Eigen::VectorXd& XtWz) {
  const Eigen::Index kt = tb.k, ks = sb.B.cols(), s = sb.B.rows();
  std::vector<Eigen::MatrixXd> G(static_cast<std::size_t>(s), Eigen::MatrixXd::Zero(kt, kt));
  std::vector<Eigen::VectorXd> R(static_cast<std::size_t>(s), Eigen::VectorXd::Zero(kt));
  for (std::size_t r = 0; r < d.size(); ++r) {
    auto& g = G[d.loc[r]];
    auto& rv = R[d.loc[r]];
    for (int a = 0; a < 4; ++a) {
      const double wa = w[r] * pr.val[r][static_cast<std::size_t>(a)];
      rv(pr.idx[r][static_cast<std::size_t>(a)]) += wa * z[r];
      for (int b = 0; b < 4; ++b)
        g(pr.idx[r][static_cast<std::size_t>(a)], pr.idx[r][static_cast<std::size_t>(b)]) += wa * pr.val[r][static_cast<std::size_t>(b)];
    }
  }
  XtWX = Eigen::MatrixXd::Zero(kt * ks, kt * ks);
  XtWz = Eigen::VectorXd::Zero(kt * ks);
  for (Eigen::Index j = 0; j < s; ++j) {
    const auto bs = sb.B.row(j);
    for (Eigen::Index a = 0; a < ks; ++a) {
      if (bs(a) == 0.0) continue;
      XtWz.segment(a * kt, kt) += bs(a) * R[static_cast<std::size_t>(j)];
      for (Eigen::Index b = 0; b < ks; ++b)
        if (bs(b) != 0.0) XtWX.block(a * kt, b * kt, kt, kt) += bs(a) * bs(b) * G[static_cast<std::size_t>(j)];
    }
  }
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

// Penalty with unit Frobenius norm per marginal term.
inline Eigen::MatrixXd tensor_penalty(const CyclicBasis& tb, const SpaceBasis& sb) {
  const Eigen::MatrixXd It = Eigen::MatrixXd::Identity(tb.k, tb.k);
  const Eigen::MatrixXd Is = Eigen::MatrixXd::Identity(sb.B.cols(), sb.B.cols());
  Eigen::MatrixXd St = kron(Is, tb.penalty());
  Eigen::MatrixXd Ss = kron(sb.S, It);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(St.rows(), St.cols());
  if (St.norm() > 0) S += St / St.norm();
  if (Ss.norm() > 0) S += Ss / Ss.norm();
  return S;
}

// Penalized IRLS at fixed lambda. `start` is a warm start or empty.
inline GamComponent pirls(LinkFamily fam, const CyclicBasis& tb, const SpaceBasis& sb, const Prepared& pr,
                          const GamData& d, const Eigen::MatrixXd& S, double lambda, const GamOptions& opt,
                          const Eigen::VectorXd& start) {
  const std::size_t n = d.size();
  std::vector<double> eta(n), w(n), z(n);
  if (start.size()) {
    eta_all(tb, sb, pr, d, start, eta);
  } else {
    for (std::size_t r = 0; r < n; ++r) eta[r] = link(fam, initial_mu(fam, d.y[r]));
  }
  auto pen_dev = [&](const Eigen::VectorXd& coef, std::vector<double>& e, double& dev) {
    eta_all(tb, sb, pr, d, coef, e);
    dev = 0.0;
    for (std::size_t r = 0; r < n; ++r) dev += unit_deviance(fam, d.y[r], link_inverse(fam, e[r]));
    return dev + lambda * coef.dot(S * coef);
  };
  GamComponent out;
  out.family = fam;
  out.lambda = lambda;
  Eigen::VectorXd coef = start;
  double old = std::numeric_limits<double>::infinity(), dev = 0.0;
  Eigen::MatrixXd XtWX, A;
  Eigen::VectorXd XtWz;
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (std::size_t r = 0; r < n; ++r) working(fam, d.y[r], eta[r], w[r], z[r]);
    normal_equations(tb, sb, pr, d, w, z, XtWX, XtWz);
    A = XtWX + lambda * S;
    A.diagonal().array() += 1e-10 * std::max(1.0, A.diagonal().mean());
    Eigen::VectorXd next = A.ldlt().solve(XtWz);
    if (!next.allFinite()) throw NumericalError("GAM IRLS produced non-finite coefficients");
    std::vector<double> e2;
    double d2 = 0.0;
    double pd = pen_dev(next, e2, d2);
    for (int half = 0; coef.size() && pd > old && half < 30; ++half) {
      next = 0.5 * (next + coef);
      pd = pen_dev(next, e2, d2);
    }
    if (!std::isfinite(pd)) throw NumericalError("GAM IRLS diverged");
    coef = std::move(next);
    eta = std::move(e2);
    dev = d2;
    out.iterations = it;
    if (std::abs(pd - old) / (std::abs(pd) + 0.1) < opt.tol) break;
    if (it == opt.max_iter) throw NumericalError("GAM IRLS did not converge in " + std::to_string(opt.max_iter) + " iterations");
    old = pd;
  }
  // final weights for edf and dispersion
  for (std::size_t r = 0; r < n; ++r) working(fam, d.y[r], eta[r], w[r], z[r]);
  normal_equations(tb, sb, pr, d, w, z, XtWX, XtWz);
  A = XtWX + lambda * S;
  A.diagonal().array() += 1e-10 * std::max(1.0, A.diagonal().mean());
  out.edf = A.ldlt().solve(XtWX).trace();
  double pearson = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double mu = link_inverse(fam, eta[r]);
    pearson += (d.y[r] - mu) * (d.y[r] - mu) / variance_fn(fam, mu);
  }
  const double resid_df = std::max(1.0, static_cast<double>(n) - out.edf);
  out.dispersion = pearson / resid_df;
  if (fam == LinkFamily::beta) out.dispersion = std::clamp(out.dispersion, 1e-8, 0.999);
  if (fam == LinkFamily::binomial) out.dispersion = 1.0;
  out.deviance = dev;
  out.gcv = static_cast<double>(n) * dev / (resid_df * resid_df);
  out.vcov = A.ldlt().solve(Eigen::MatrixXd::Identity(A.rows(), A.cols())) * out.dispersion;
  out.coef = std::move(coef);
  return out;
}

inline GamComponent fit_component(LinkFamily fam, const CyclicBasis& tb, const SpaceBasis& sb, const GamData& d,
                                  const GamOptions& opt) {
  const Prepared pr = prepare_rows(tb, d);
  const Eigen::MatrixXd S = tensor_penalty(tb, sb);
  // scale the penalty to the data so the lambda grid is unit-free
  std::vector<double> w(d.size(), 1.0), z(d.size(), 0.0);
  Eigen::MatrixXd XtX;
  Eigen::VectorXd unused;
  normal_equations(tb, sb, pr, d, w, z, XtX, unused);
  const double scale = XtX.norm() / std::max(1e-300, S.norm());
  const Eigen::MatrixXd Sc = S.norm() > 0 ? Eigen::MatrixXd(S * scale) : S;
  if (opt.lambda) return pirls(fam, tb, sb, pr, d, Sc, *opt.lambda, opt, {});
  if (opt.lambda_grid.empty()) throw ConfigError("empty smoothing-parameter grid");
  std::optional<GamComponent> best;
  Eigen::VectorXd warm;
  for (double lam : opt.lambda_grid) {
    GamComponent c = pirls(fam, tb, sb, pr, d, Sc, lam, opt, warm);
    warm = c.coef;
    if (!best || c.gcv < best->gcv) best = std::move(c);
  }
  return *best;
}

inline void check_support(MarginFamily f, const std::vector<double>& y) {
  for (double v : y) {
    bool ok = std::isfinite(v);
    switch (f) {
      case MarginFamily::gaussian: break;
      case MarginFamily::gamma: ok = ok && v > 0; break;
      case MarginFamily::beta: ok = ok && v > 0 && v < 1; break;
      case MarginFamily::hurdle_gamma: ok = ok && v >= 0; break;
    }
    if (!ok) throw DataError("value " + format_double(v) + " outside the support of the " + std::string(to_string(f)) + " family");
  }
}

}  // namespace detail

/// Fits the GAM for one variable over all sites in `locs`.
inline GamFit fit_gam(const GamData& d, const std::vector<Location>& locs, MarginFamily family,
                      const GamOptions& opt = {}) {
  if (opt.k_time < 4) throw ConfigError("k_time must be at least 4");
  if (!(opt.period > 0)) throw ConfigError("season period must be positive");
  if (d.season.size() != d.size() || d.loc.size() != d.size()) throw DataError("GAM data columns differ in length");
  for (auto j : d.loc)
    if (j >= locs.size()) throw DataError("GAM data names an unknown location");
  detail::check_support(family, d.y);
  GamFit fit;
  fit.family = family;
  fit.time = {opt.k_time, opt.period};
  const std::size_t ks = opt.k_space > 0 ? static_cast<std::size_t>(opt.k_space) : std::min<std::size_t>(locs.size(), 20);
  fit.space = make_space_basis(locs, ks);
  if (opt.check_size && d.size() < 10 * (static_cast<std::size_t>(opt.k_time) + ks))
    throw DataError("GAM needs at least " + std::to_string(10 * (opt.k_time + ks)) + " rows, got " + std::to_string(d.size()));
  switch (family) {
    case MarginFamily::gaussian:
      fit.mean = detail::fit_component(LinkFamily::gaussian, fit.time, fit.space, d, opt);
      break;
    case MarginFamily::gamma:
      fit.mean = detail::fit_component(LinkFamily::gamma, fit.time, fit.space, d, opt);
      break;
    case MarginFamily::beta:
      fit.mean = detail::fit_component(LinkFamily::beta, fit.time, fit.space, d, opt);
      break;
    case MarginFamily::hurdle_gamma: {
      GamData wet = d, pos;
      for (auto& v : wet.y) v = v > 0 ? 1.0 : 0.0;
      for (std::size_t r = 0; r < d.size(); ++r)
        if (d.y[r] > 0) pos.y.push_back(d.y[r]), pos.season.push_back(d.season[r]), pos.loc.push_back(d.loc[r]);
      if (pos.size() < 2) throw DataError("hurdle_gamma needs positive values");
      fit.wet = detail::fit_component(LinkFamily::binomial, fit.time, fit.space, wet, opt);
      fit.mean = detail::fit_component(LinkFamily::gamma, fit.time, fit.space, pos, opt);
      break;
    }
  }
  return fit;
}

// ---------------------------------------------------------------- PIT

namespace detail {

inline double cont_cdf(LinkFamily f, double y, double mu, double phi) {
  namespace bm = boost::math;
  switch (f) {
    case LinkFamily::gaussian: return bm::cdf(bm::normal_distribution<double>(mu, std::sqrt(phi)), y);
    case LinkFamily::gamma: return bm::cdf(bm::gamma_distribution<double>(1.0 / phi, mu * phi), y);
    case LinkFamily::beta: {
      const double nu = 1.0 / phi - 1.0;
      return bm::cdf(bm::beta_distribution<double>(mu * nu, (1.0 - mu) * nu), y);
    }
    case LinkFamily::binomial: break;
  }
  throw DomainError("no continuous CDF for this family");
}

inline double cont_quantile(LinkFamily f, double u, double mu, double phi) {
  namespace bm = boost::math;
  switch (f) {
    case LinkFamily::gaussian: return bm::quantile(bm::normal_distribution<double>(mu, std::sqrt(phi)), u);
    case LinkFamily::gamma: return bm::quantile(bm::gamma_distribution<double>(1.0 / phi, mu * phi), u);
    case LinkFamily::beta: {
      const double nu = 1.0 / phi - 1.0;
      return bm::quantile(bm::beta_distribution<double>(mu * nu, (1.0 - mu) * nu), u);
    }
    case LinkFamily::binomial: break;
  }
  throw DomainError("no continuous quantile for this family");
}

}  // namespace detail

/// u = F(y | mu(season, loc), phi), randomized uniformly on (0, p0) at y = 0
/// for hurdle_gamma.
inline double pit(const GamFit& fit, double y, double season, std::size_t loc, Rng& rng) {
  double u = 0.0;
  if (fit.family == MarginFamily::hurdle_gamma) {
    if (!(y >= 0)) throw DataError("hurdle_gamma PIT of a negative value");
    const double p0 = fit.p_zero(season, loc);
    if (y == 0.0) {
      u = rng.uniform() * p0;
    } else {
      u = p0 + (1.0 - p0) * detail::cont_cdf(LinkFamily::gamma, y, fit.mu(season, loc), fit.mean.dispersion);
    }
  } else {
    detail::check_support(fit.family, {y});
    u = detail::cont_cdf(fit.mean.family, y, fit.mu(season, loc), fit.mean.dispersion);
  }
  return clamp_unit(u);
}

/// PITs of a whole GamData series, one rng draw per zero in row order.
inline std::vector<double> pit(const GamFit& fit, const GamData& d, Rng& rng) {
  std::vector<double> u(d.size());
  for (std::size_t r = 0; r < d.size(); ++r) u[r] = pit(fit, d.y[r], d.season[r], d.loc[r], rng);
  return u;
}

/// Plain inverse PIT under one fit.
inline double inverse_pit(const GamFit& fit, double u, double season, std::size_t loc) {
  u = clamp_unit(u);
  if (fit.family == MarginFamily::hurdle_gamma) {
    const double p0 = fit.p_zero(season, loc);
    if (u <= p0) return 0.0;
    return detail::cont_quantile(LinkFamily::gamma, (u - p0) / (1.0 - p0), fit.mu(season, loc), fit.mean.dispersion);
  }
  return detail::cont_quantile(fit.mean.family, u, fit.mu(season, loc), fit.mean.dispersion);
}

enum class DeltaScale { link, response };

/// Counts support clamps of the adjusted mean. Shared across threads.
struct DeltaCounters {
  std::atomic<std::size_t> clamps{0};
};

/// F^{-1}(u | mu*, phi_rc) with mu* = mu_rc + mu_mp - mu_mc, formed on the
/// link scale by default.
inline double inverse_pit_delta(double u, const GamFit& rc, const GamFit& mc, const GamFit& mp, double season,
                                std::size_t loc, DeltaScale scale = DeltaScale::link, DeltaCounters* counters = nullptr) {
  if (rc.family != mc.family || rc.family != mp.family) throw ConfigError("delta fits use different families");
  u = clamp_unit(u);
  auto adjusted = [&](auto get_comp, LinkFamily fam) {
    const double e_rc = rc.eta(get_comp(rc), season, loc), e_mc = mc.eta(get_comp(mc), season, loc),
                 e_mp = mp.eta(get_comp(mp), season, loc);
    if (scale == DeltaScale::link) {
      const double eta = e_rc + e_mp - e_mc;
      if (counters && detail::link_saturates(fam, eta)) ++counters->clamps;
      return detail::link_inverse(fam, eta);
    }
    double mu = detail::link_inverse(fam, e_rc) + detail::link_inverse(fam, e_mp) - detail::link_inverse(fam, e_mc);
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    if (fam == LinkFamily::gamma) lo = detail::kMuEps;
    if (fam == LinkFamily::beta || fam == LinkFamily::binomial) lo = detail::kMuEps, hi = 1.0 - detail::kMuEps;
    if (mu < lo || mu > hi) {
      mu = std::clamp(mu, lo, hi);
      if (counters) ++counters->clamps;
    }
    return mu;
  };
  auto mean_of = [](const GamFit& f) -> const GamComponent& { return f.mean; };
  if (rc.family == MarginFamily::hurdle_gamma) {
    auto wet_of = [](const GamFit& f) -> const GamComponent& { return *f.wet; };
    const double p0 = 1.0 - adjusted(wet_of, LinkFamily::binomial);
    if (u <= p0) return 0.0;
    const double mu = adjusted(mean_of, LinkFamily::gamma);
    return detail::cont_quantile(LinkFamily::gamma, (u - p0) / (1.0 - p0), mu, rc.mean.dispersion);
  }
  const double mu = adjusted(mean_of, rc.mean.family);
  return detail::cont_quantile(rc.mean.family, u, mu, rc.mean.dispersion);
}

// ------------------------------------------------------- re-uniformization

/// Piecewise-linear monotone map between a PIT sample's values and their
/// scaled ranks, through (0, 0) and (1, 1). Inactive maps are the identity.
struct ReuniformMap {
  bool active = false;
  std::vector<double> x, y;  // strictly increasing knots

  static double interp(const std::vector<double>& from, const std::vector<double>& to, double v) {
    if (v <= from.front()) return to.front();
    if (v >= from.back()) return to.back();
    const auto it = std::upper_bound(from.begin(), from.end(), v);
    const std::size_t k = static_cast<std::size_t>(it - from.begin());
    const double t = (v - from[k - 1]) / (from[k] - from[k - 1]);
    return to[k - 1] + t * (to[k] - to[k - 1]);
  }

  double forward(double u) const { return active ? clamp_unit(interp(x, y, u)) : u; }
  double inverse(double v) const { return active ? clamp_unit(interp(y, x, v)) : v; }
};

struct Reuniformized {
  std::vector<double> u;
  ReuniformMap map;
  double ks_statistic = 0.0;
};

/// Replaces u by average rank / (n + 1) when a KS test against the uniform
/// rejects at `level`; otherwise passes u through.
inline Reuniformized reuniformize(std::span<const double> u, double level = 0.01) {
  if (u.size() < 2) throw DataError("reuniformize needs at least 2 values");
  Reuniformized out;
  out.ks_statistic = ks_uniform_statistic(u);
  if (level <= 0.0 || ks_pvalue(out.ks_statistic, u.size()) >= level) {
    out.u.assign(u.begin(), u.end());
    return out;
  }
  const auto r = rank_pit(u);
  out.u = r;
  std::vector<std::pair<double, double>> kn;
  for (std::size_t i = 0; i < u.size(); ++i) kn.emplace_back(u[i], r[i]);
  std::sort(kn.begin(), kn.end());
  auto& m = out.map;
  m.active = true;
  m.x.push_back(0.0);
  m.y.push_back(0.0);
  for (const auto& [a, b] : kn) {
    if (a <= m.x.back()) continue;
    m.x.push_back(a);
    m.y.push_back(b);
  }
  if (m.x.back() < 1.0) {
    m.x.push_back(1.0);
    m.y.push_back(1.0);
  }
  return out;
}

// ---------------------------------------------------------- serialization

inline void write_gam(std::ostream& os, const GamFit& f) {
  auto comp = [&](const char* tag, const GamComponent& c) {
    os << "component," << tag << ",lambda," << detail::format_double(c.lambda) << ",dispersion,"
       << detail::format_double(c.dispersion) << ",edf," << detail::format_double(c.edf) << '\n';
    os << "coef";
    for (Eigen::Index k = 0; k < c.coef.size(); ++k) os << ',' << detail::format_double(c.coef(k));
    os << '\n';
  };
  os << "#gam\nfamily," << to_string(f.family) << "\nk_time," << f.time.k << "\nperiod,"
     << detail::format_double(f.time.period) << "\nspace," << f.space.B.rows() << ',' << f.space.B.cols() << '\n';
  for (Eigen::Index j = 0; j < f.space.B.rows(); ++j) {
    os << "site";
    for (Eigen::Index a = 0; a < f.space.B.cols(); ++a) os << ',' << detail::format_double(f.space.B(j, a));
    os << '\n';
  }
  comp("mean", f.mean);
  if (f.wet) comp("wet", *f.wet);
  os << "#end\n";
}

inline GamFit read_gam(std::istream& is) {
  GamFit f;
  std::string line;
  bool started = false;
  GamComponent* cur = nullptr;
  Eigen::Index site = 0;
  while (std::getline(is, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line == "#gam") {
      started = true;
      continue;
    }
    if (!started) throw DataError("GAM block must start with #gam");
    if (line == "#end") {
      if (!f.mean.coef.size()) throw DataError("GAM block without coefficients");
      return f;
    }
    const auto v = detail::split(line, ',');
    const std::string& key = v[0];
    if (key == "family") {
      f.family = margin_family_from_string(v.at(1));
    } else if (key == "k_time") {
      f.time.k = std::stoi(v.at(1));
    } else if (key == "period") {
      f.time.period = detail::parse_double(v.at(1), "period");
    } else if (key == "space") {
      f.space.B.resize(std::stol(v.at(1)), std::stol(v.at(2)));
      f.space.S = Eigen::MatrixXd::Zero(f.space.B.cols(), f.space.B.cols());
    } else if (key == "site") {
      if (site >= f.space.B.rows() || static_cast<Eigen::Index>(v.size()) != f.space.B.cols() + 1)
        throw DataError("GAM block: bad site row");
      for (Eigen::Index a = 0; a < f.space.B.cols(); ++a)
        f.space.B(site, a) = detail::parse_double(v[static_cast<std::size_t>(a + 1)], "basis value");
      ++site;
    } else if (key == "component") {
      if (v.at(1) == "mean") {
        cur = &f.mean;
        cur->family = f.family == MarginFamily::gaussian ? LinkFamily::gaussian
                      : f.family == MarginFamily::beta   ? LinkFamily::beta
                                                         : LinkFamily::gamma;
      } else if (v.at(1) == "wet") {
        f.wet.emplace();
        cur = &*f.wet;
        cur->family = LinkFamily::binomial;
      } else {
        throw DataError("GAM block: unknown component " + v[1]);
      }
      cur->lambda = detail::parse_double(v.at(3), "lambda");
      cur->dispersion = detail::parse_double(v.at(5), "dispersion");
      cur->edf = detail::parse_double(v.at(7), "edf");
    } else if (key == "coef") {
      if (!cur) throw DataError("GAM block: coefficients before component");
      cur->coef.resize(static_cast<Eigen::Index>(v.size() - 1));
      for (std::size_t k = 1; k < v.size(); ++k) cur->coef(static_cast<Eigen::Index>(k - 1)) = detail::parse_double(v[k], "coefficient");
      if (cur->coef.size() != f.time.k * f.space.B.cols()) throw DataError("GAM block: coefficient count mismatch");
    } else {
      throw DataError("GAM block: unknown key " + key);
    }
  }
  throw DataError("GAM block not terminated");
}

}  // namespace vinebc
