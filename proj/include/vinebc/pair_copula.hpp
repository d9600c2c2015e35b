#pragma once

// Bivariate copula families: densities, h-functions, their inverses,
// Kendall's tau maps and single-pair estimation.
//
// Conventions. A pair copula is evaluated at (u, v). `hfunc` with
// HDirection::cond_on_second returns C(U <= u | V = v) = dC/dv, and with
// HDirection::cond_on_first returns C(V <= v | U = u) = dC/du. Rotations
// follow the usual vine convention: 90 degrees reflects the first argument,
// 180 reflects both and 270 reflects the second.

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include "vinebc/core.hpp"
#include "vinebc/stats.hpp"

namespace vinebc {

enum class Family { independence, gaussian, clayton, gumbel, frank };
enum class HDirection { cond_on_second, cond_on_first };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::independence: return "independence";
    case Family::gaussian: return "gaussian";
    case Family::clayton: return "clayton";
    case Family::gumbel: return "gumbel";
    case Family::frank: return "frank";
  }
  return "?";
}

inline Family family_from_string(std::string_view s) {
  if (s == "independence" || s == "indep") return Family::independence;
  if (s == "gaussian") return Family::gaussian;
  if (s == "clayton") return Family::clayton;
  if (s == "gumbel") return Family::gumbel;
  if (s == "frank") return Family::frank;
  throw DomainError("unknown copula family '" + std::string(s) + "'");
}

inline bool is_rotatable(Family f) { return f == Family::clayton || f == Family::gumbel; }

struct PairCopulaSpec {
  Family family = Family::independence;
  double parameter = 0.0;
  int rotation = 0;  // 0, 90, 180, 270; always 0 for symmetric families

  static PairCopulaSpec independence() { return {}; }
  static PairCopulaSpec gaussian(double rho) { return {Family::gaussian, rho, 0}; }
  static PairCopulaSpec clayton(double theta, int rot = 0) { return {Family::clayton, theta, rot}; }
  static PairCopulaSpec gumbel(double theta, int rot = 0) { return {Family::gumbel, theta, rot}; }
  static PairCopulaSpec frank(double theta) { return {Family::frank, theta, 0}; }

  friend bool operator==(const PairCopulaSpec&, const PairCopulaSpec&) = default;
};

inline std::string describe(const PairCopulaSpec& s) {
  std::ostringstream os;
  os << to_string(s.family);
  if (s.family != Family::independence) os << "(" << s.parameter << ")";
  if (s.rotation != 0) os << "@" << s.rotation;
  return os.str();
}

/// Throws DomainError when the parameter lies outside the family's domain.
inline void check_spec(const PairCopulaSpec& s) {
  const double p = s.parameter;
  if (s.rotation != 0 && s.rotation != 90 && s.rotation != 180 && s.rotation != 270)
    throw DomainError("rotation must be one of 0, 90, 180, 270");
  if (s.rotation != 0 && !is_rotatable(s.family))
    throw DomainError(std::string(to_string(s.family)) + " copula does not take a rotation");
  if (!std::isfinite(p)) throw DomainError("copula parameter is not finite");
  switch (s.family) {
    case Family::independence:
      return;
    case Family::gaussian:
      if (!(p > -1.0 && p < 1.0)) throw DomainError("gaussian copula requires rho in (-1, 1)");
      return;
    case Family::clayton:
      if (!(p > 0.0)) throw DomainError("clayton copula requires theta > 0");
      return;
    case Family::gumbel:
      if (!(p >= 1.0)) throw DomainError("gumbel copula requires theta >= 1");
      return;
    case Family::frank:
      if (p == 0.0) throw DomainError("frank copula requires theta != 0");
      return;
  }
}

namespace detail {

// ---- unrotated families; all four are exchangeable, so the conditional
// distribution given the first argument is base_h with swapped arguments.

inline double base_log_density(Family f, double th, double u, double v) {
  switch (f) {
    case Family::independence:
      return 0.0;
    case Family::gaussian: {
      const double x = norm_quantile(u), y = norm_quantile(v);
      const double r2 = th * th;
      return -0.5 * std::log1p(-r2) - (r2 * (x * x + y * y) - 2.0 * th * x * y) / (2.0 * (1.0 - r2));
    }
    case Family::clayton: {
      const double lu = std::log(u), lv = std::log(v);
      const double t = std::exp(-th * lu) + std::exp(-th * lv) - 1.0;
      return std::log1p(th) - (1.0 + th) * (lu + lv) - (2.0 + 1.0 / th) * std::log(t);
    }
    case Family::gumbel: {
      const double x = -std::log(u), y = -std::log(v);
      const double lx = std::log(x), ly = std::log(y);
      // s = x^th + y^th computed in log space
      const double a = th * lx, b = th * ly;
      const double ls = std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
      const double A = std::exp(ls / th);
      return -A + x + y + (th - 1.0) * (lx + ly) + (1.0 / th - 2.0) * ls + std::log(A + th - 1.0);
    }
    case Family::frank: {
      if (std::abs(th) < 1e-10) return 0.0;
      const double a = std::expm1(-th * u), b = std::expm1(-th * v), c = std::expm1(-th);
      const double den = c + a * b;
      return std::log(th * (-c)) - th * (u + v) - 2.0 * std::log(std::abs(den));
    }
  }
  return 0.0;
}

// C(U <= u | V = v)
inline double base_h(Family f, double th, double u, double v) {
  switch (f) {
    case Family::independence:
      return u;
    case Family::gaussian: {
      const double x = norm_quantile(u), y = norm_quantile(v);
      return norm_cdf((x - th * y) / std::sqrt(1.0 - th * th));
    }
    case Family::clayton: {
      const double lu = std::log(u), lv = std::log(v);
      const double t = std::exp(-th * lu) + std::exp(-th * lv) - 1.0;
      return std::exp(-(th + 1.0) * lv - (1.0 + 1.0 / th) * std::log(t));
    }
    case Family::gumbel: {
      const double x = -std::log(u), y = -std::log(v);
      const double a = th * std::log(x), b = th * std::log(y);
      const double ls = std::max(a, b) + std::log1p(std::exp(-std::abs(a - b)));
      const double A = std::exp(ls / th);
      return std::exp(-A + y + (th - 1.0) * std::log(y) + (1.0 / th - 1.0) * ls);
    }
    case Family::frank: {
      if (std::abs(th) < 1e-10) return u;
      const double a = std::expm1(-th * u), b = std::expm1(-th * v), c = std::expm1(-th);
      return (b + 1.0) * a / (c + a * b);
    }
  }
  return u;
}

// Inverse of base_h in its first argument.
inline double base_hinv(Family f, double th, double w, double v) {
  switch (f) {
    case Family::independence:
      return w;
    case Family::gaussian: {
      const double y = norm_quantile(v);
      return norm_cdf(norm_quantile(w) * std::sqrt(1.0 - th * th) + th * y);
    }
    case Family::clayton: {
      const double lv = std::log(v);
      const double ut = std::exp(-th * lv) * std::expm1(-th / (1.0 + th) * std::log(w)) + 1.0;
      return std::exp(-std::log(ut) / th);
    }
    case Family::gumbel: {
      // Solve delta + (th-1) log1p(delta/y) + log w = 0 for delta = A - y >= 0.
      // The left side is increasing and concave, so Newton from delta = 0
      // approaches the root monotonically from below.
      const double y = -std::log(v);
      const double lw = std::log(w);
      double delta = 0.0;
      for (int it = 0; it < 200; ++it) {
        const double f0 = delta + (th - 1.0) * std::log1p(delta / y) + lw;
        const double f1 = 1.0 + (th - 1.0) / (y + delta);
        const double step = f0 / f1;
        delta -= step;
        if (delta < 0.0) delta = 0.0;
        // f0 carries rounding noise of order eps * |log w|
        const double noise = 1e-14 * (1.0 + delta + std::abs(lw)) / f1;
        if (std::abs(step) <= std::max(1e-15 * (1.0 + delta), noise)) {
          const double xth = std::expm1(th * std::log1p(delta / y));
          const double x = y * std::exp(std::log(xth) / th);
          return std::exp(-x);
        }
      }
      throw NumericalError("gumbel h-inverse did not converge");
    }
    case Family::frank: {
      if (std::abs(th) < 1e-10) return w;
      const double c = std::expm1(-th);
      const double e = std::exp(-th * v);
      const double A = w * c / (w + (1.0 - w) * e);
      return -std::log1p(A) / th;
    }
  }
  return w;
}

}  // namespace detail

/// Copula density c(u, v); inputs are clamped to [1e-10, 1 - 1e-10].
inline double log_density(const PairCopulaSpec& s, double u, double v) {
  check_spec(s);
  u = clamp_unit(u);
  v = clamp_unit(v);
  switch (s.rotation) {
    case 90: u = 1.0 - u; break;
    case 180: u = 1.0 - u; v = 1.0 - v; break;
    case 270: v = 1.0 - v; break;
    default: break;
  }
  return detail::base_log_density(s.family, s.parameter, u, v);
}

inline double density(const PairCopulaSpec& s, double u, double v) {
  return std::exp(log_density(s, u, v));
}

/// Conditional distribution function of one argument given the other.
inline double hfunc(const PairCopulaSpec& s, double u, double v,
                    HDirection dir = HDirection::cond_on_second) {
  check_spec(s);
  u = clamp_unit(u);
  v = clamp_unit(v);
  const Family f = s.family;
  const double th = s.parameter;
  double h = 0.0;
  if (dir == HDirection::cond_on_second) {
    switch (s.rotation) {
      case 90: h = 1.0 - detail::base_h(f, th, 1.0 - u, v); break;
      case 180: h = 1.0 - detail::base_h(f, th, 1.0 - u, 1.0 - v); break;
      case 270: h = detail::base_h(f, th, u, 1.0 - v); break;
      default: h = detail::base_h(f, th, u, v); break;
    }
  } else {
    switch (s.rotation) {
      case 90: h = detail::base_h(f, th, v, 1.0 - u); break;
      case 180: h = 1.0 - detail::base_h(f, th, 1.0 - v, 1.0 - u); break;
      case 270: h = 1.0 - detail::base_h(f, th, 1.0 - v, u); break;
      default: h = detail::base_h(f, th, v, u); break;
    }
  }
  return clamp_unit(h);
}

/// Inverse h-function. With cond_on_second, returns u solving
/// hfunc(u, given, cond_on_second) = w; with cond_on_first, returns v solving
/// hfunc(given, v, cond_on_first) = w.
inline double hinv(const PairCopulaSpec& s, double w, double given,
                   HDirection dir = HDirection::cond_on_second) {
  check_spec(s);
  w = clamp_unit(w);
  given = clamp_unit(given);
  const Family f = s.family;
  const double th = s.parameter;
  double r = 0.0;
  // Both directions reduce to the same base inverse because the unrotated
  // families are exchangeable; only the reflections differ.
  if (dir == HDirection::cond_on_second) {
    switch (s.rotation) {
      case 90: r = 1.0 - detail::base_hinv(f, th, 1.0 - w, given); break;
      case 180: r = 1.0 - detail::base_hinv(f, th, 1.0 - w, 1.0 - given); break;
      case 270: r = detail::base_hinv(f, th, w, 1.0 - given); break;
      default: r = detail::base_hinv(f, th, w, given); break;
    }
  } else {
    switch (s.rotation) {
      case 90: r = detail::base_hinv(f, th, w, 1.0 - given); break;
      case 180: r = 1.0 - detail::base_hinv(f, th, 1.0 - w, 1.0 - given); break;
      case 270: r = 1.0 - detail::base_hinv(f, th, 1.0 - w, given); break;
      default: r = detail::base_hinv(f, th, w, given); break;
    }
  }
  return clamp_unit(r);
}

// ---------------------------------------------------------------- tau maps

namespace detail {

// Debye function D1(x) = (1/x) * int_0^x t / (e^t - 1) dt.
inline double debye1(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x / 4.0;
  auto integrand = [](double t) { return t == 0.0 ? 1.0 : t / std::expm1(t); };
  // Split long ranges so the fixed-order rule stays accurate.
  const int pieces = std::max(1, static_cast<int>(std::ceil(std::abs(x) / 10.0)));
  double total = 0.0;
  for (int k = 0; k < pieces; ++k) {
    const double a = x * k / pieces, b = x * (k + 1) / pieces;
    total += boost::math::quadrature::gauss<double, 30>::integrate(integrand, a, b);
  }
  return total / x;
}

inline double frank_tau(double theta) {
  if (std::abs(theta) < 1e-8) return theta / 9.0;
  return 1.0 - 4.0 / theta * (1.0 - debye1(theta));
}

}  // namespace detail

/// Kendall's tau implied by a specification (rotations at 90/270 flip the sign).
inline double param_to_tau(const PairCopulaSpec& s) {
  check_spec(s);
  double tau = 0.0;
  switch (s.family) {
    case Family::independence: tau = 0.0; break;
    case Family::gaussian: tau = 2.0 / std::numbers::pi * std::asin(s.parameter); break;
    case Family::clayton: tau = s.parameter / (s.parameter + 2.0); break;
    case Family::gumbel: tau = 1.0 - 1.0 / s.parameter; break;
    case Family::frank: tau = detail::frank_tau(s.parameter); break;
  }
  if (s.rotation == 90 || s.rotation == 270) tau = -tau;
  return tau;
}

inline double param_to_tau(Family f, double parameter, int rotation = 0) {
  return param_to_tau(PairCopulaSpec{f, parameter, rotation});
}

/// Parameter reproducing Kendall's tau. Clayton and Gumbel need rotation 90
/// or 270 for negative tau.
inline double tau_to_param(Family f, double tau, int rotation = 0) {
  if (!(std::abs(tau) < 1.0)) throw DomainError("tau_to_param requires |tau| < 1");
  double t = tau;
  if (is_rotatable(f)) {
    const bool flips = rotation == 90 || rotation == 270;
    if (!flips && tau < 0.0)
      throw DomainError(std::string(to_string(f)) +
                        " copula cannot represent negative tau; use rotation 90 or 270");
    if (flips && tau > 0.0)
      throw DomainError(std::string(to_string(f)) +
                        " copula rotated by 90/270 cannot represent positive tau; use rotation 0 or 180");
    t = std::abs(tau);
  } else if (rotation != 0) {
    throw DomainError(std::string(to_string(f)) + " copula does not take a rotation");
  }
  switch (f) {
    case Family::independence:
      return 0.0;
    case Family::gaussian:
      return std::sin(std::numbers::pi * t / 2.0);
    case Family::clayton:
      if (t == 0.0) throw DomainError("clayton copula cannot represent tau = 0");
      return 2.0 * t / (1.0 - t);
    case Family::gumbel:
      return 1.0 / (1.0 - t);
    case Family::frank: {
      if (t == 0.0) throw DomainError("frank copula cannot represent tau = 0");
      const double sign = t > 0.0 ? 1.0 : -1.0;
      const double target = std::abs(t);
      double hi = 1.0;
      while (detail::frank_tau(hi) < target) hi *= 2.0;
      auto fn = [&](double th) { return detail::frank_tau(th) - target; };
      std::uintmax_t iters = 200;
      auto tol = [](double a, double b) { return std::abs(a - b) <= 1e-14 * std::max(1.0, std::abs(a)); };
      auto r = boost::math::tools::toms748_solve(fn, 0.0, hi, -target, fn(hi), tol, iters);
      return sign * 0.5 * (r.first + r.second);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------- fitting

enum class SelectionCriterion { aic, loglik };

struct FitPairOptions {
  std::vector<Family> family_set{Family::independence, Family::gaussian, Family::clayton,
                                 Family::gumbel, Family::frank};
  SelectionCriterion criterion = SelectionCriterion::aic;
  /// Level of the asymptotic Kendall-tau independence test run before family
  /// selection; 0 disables it.
  double indep_test_level = 0.05;
};

struct PairFit {
  PairCopulaSpec spec;
  double loglik = 0.0;
  double aic = 0.0;
  bool fallback = false;  // every parametric fit failed and independence was forced
};

inline double pair_loglik(const PairCopulaSpec& s, std::span<const double> u, std::span<const double> v) {
  double ll = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) ll += log_density(s, u[i], v[i]);
  return ll;
}

namespace detail {

struct FamilyRange {
  double tau_lo, tau_hi;  // admissible |tau| for the unrotated family
  double par_lo, par_hi;
};

inline FamilyRange family_range(Family f) {
  switch (f) {
    case Family::gaussian: return {-0.99, 0.99, -0.9999, 0.9999};
    case Family::clayton: return {1e-4, 0.93, 2e-4, 28.0};
    case Family::gumbel: return {0.0, 0.94, 1.0, 17.0};
    case Family::frank: return {-0.9, 0.9, -50.0, 50.0};
    default: return {0.0, 0.0, 0.0, 0.0};
  }
}

inline double critical_normal(double level) { return norm_quantile(1.0 - level / 2.0); }

}  // namespace detail

/// Selects and estimates a pair copula for pseudo-observations (u, v).
///
/// Each candidate family (and rotation, for Clayton/Gumbel, chosen by the
/// sign of the empirical tau) is initialised by tau inversion and refined by
/// Brent maximisation of the log-likelihood over a tau-neighbourhood of the
/// starting value.
inline PairFit fit_pair(std::span<const double> u, std::span<const double> v,
                        const FitPairOptions& opt = {}) {
  if (u.size() != v.size()) throw DataError("fit_pair: samples differ in length");
  const std::size_t n = u.size();
  if (n < 20) throw DataError("fit_pair: at least 20 observations required");

  const double tau = kendall_tau(u, v);
  const bool has_indep = std::find(opt.family_set.begin(), opt.family_set.end(),
                                   Family::independence) != opt.family_set.end();
  if (has_indep && opt.indep_test_level > 0.0) {
    const double nn = static_cast<double>(n);
    const double z = 3.0 * tau * std::sqrt(nn * (nn - 1.0)) / std::sqrt(2.0 * (2.0 * nn + 5.0));
    if (std::abs(z) < detail::critical_normal(opt.indep_test_level)) {
      return {PairCopulaSpec::independence(), 0.0, 0.0, false};
    }
  }

  struct Candidate {
    PairCopulaSpec spec;
    double ll;
    int npar;
  };
  std::vector<Candidate> cands;
  if (has_indep) cands.push_back({PairCopulaSpec::independence(), 0.0, 0});

  for (Family f : opt.family_set) {
    if (f == Family::independence) continue;
    const auto range = detail::family_range(f);
    std::vector<int> rotations{0};
    if (is_rotatable(f)) rotations = tau >= 0.0 ? std::vector<int>{0, 180} : std::vector<int>{90, 270};
    for (int rot : rotations) {
      const double t0 = is_rotatable(f) ? std::abs(tau) : tau;
      const double tlo = std::max(range.tau_lo, t0 - 0.3);
      const double thi = std::min(range.tau_hi, t0 + 0.3);
      if (!(tlo < thi)) continue;
      auto to_par = [&](double t) {
        if (f == Family::frank && std::abs(t) < 1e-6) return t >= 0.0 ? 1e-5 : -1e-5;
        const double p = tau_to_param(f, t, 0);
        return std::clamp(p, range.par_lo, range.par_hi);
      };
      double plo = 0.0, phi = 0.0;
      try {
        plo = to_par(tlo);
        phi = to_par(thi);
      } catch (const DomainError&) {
        continue;
      }
      if (!(plo < phi)) continue;
      // Evaluate in the unrotated frame; the Gaussian likelihood collapses to
      // three sufficient statistics.
      std::vector<double> uu(n), vv(n);
      for (std::size_t i = 0; i < n; ++i) {
        double a = clamp_unit(u[i]), b = clamp_unit(v[i]);
        if (rot == 90 || rot == 180) a = 1.0 - a;
        if (rot == 180 || rot == 270) b = 1.0 - b;
        uu[i] = a;
        vv[i] = b;
      }
      double sxxyy = 0.0, sxy = 0.0;
      if (f == Family::gaussian) {
        for (std::size_t i = 0; i < n; ++i) {
          const double x = norm_quantile(uu[i]), y = norm_quantile(vv[i]);
          sxxyy += x * x + y * y;
          sxy += x * y;
        }
      }
      const double nn = static_cast<double>(n);
      auto negll = [&](double p) {
        if (f == Family::frank && p == 0.0) return 0.0;
        double ll = 0.0;
        if (f == Family::gaussian) {
          const double r2 = p * p;
          ll = -0.5 * nn * std::log1p(-r2) - (r2 * sxxyy - 2.0 * p * sxy) / (2.0 * (1.0 - r2));
        } else {
          for (std::size_t i = 0; i < n; ++i) ll += detail::base_log_density(f, p, uu[i], vv[i]);
        }
        return std::isfinite(ll) ? -ll : std::numeric_limits<double>::max();
      };
      try {
        std::uintmax_t iters = 200;
        auto best = boost::math::tools::brent_find_minima(negll, plo, phi, 30, iters);
        PairCopulaSpec s{f, best.first, rot};
        if (f == Family::frank && s.parameter == 0.0) continue;
        check_spec(s);
        const double ll = -best.second;
        if (std::isfinite(ll)) cands.push_back({s, ll, 1});
      } catch (const std::exception&) {
        continue;
      }
    }
  }

  if (cands.empty()) return {PairCopulaSpec::independence(), 0.0, 0.0, true};

  const Candidate* best = &cands.front();
  auto score = [&](const Candidate& c) {
    return opt.criterion == SelectionCriterion::aic ? -2.0 * c.ll + 2.0 * c.npar : -c.ll;
  };
  for (const auto& c : cands) {
    if (score(c) < score(*best)) best = &c;
  }
  return {best->spec, best->ll, -2.0 * best->ll + 2.0 * best->npar, false};
}

}  // namespace vinebc
