#pragma once

// Synthetic reference/model panels: AR(1) latent Gaussian processes whose
// innovations follow a Gaussian D-vine, plus deterministic seasonal means.
//
//   Z_t = phi Z_{t-1} + eps_t,   Y_{t,k} = mu_k + sigma_k sin(4 * 2 pi t / T) + Z_{t,k}

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "vinebc/core.hpp"
#include "vinebc/panel.hpp"
#include "vinebc/vine_model.hpp"

namespace vinebc {

struct DependenceStrength {
  double within = 0;   // two variables at one location
  double between = 0;  // one variable at two locations
};

struct SimConfig {
  std::size_t T = 200;
  std::size_t n_vars = 2;
  std::size_t n_locs = 2;
  double phi_ref = 0.6;
  double phi_model = 0.3;
  DependenceStrength ref;
  DependenceStrength model;
  double mu_lo = 0, mu_hi = 10;
  double sigma_lo = 0.5, sigma_hi = 2;
  std::size_t burn_in = 100;
  double seasonal_frequency = 4;
  Date start = make_date(2001, 1, 1);
  std::uint64_t seed = 0;

  void check() const {
    if (T < 2) throw ConfigError("simulation length T must be at least 2");
    if (n_vars == 0 || n_locs == 0) throw ConfigError("n_vars and n_locs must be positive");
    for (double phi : {phi_ref, phi_model})
      if (!(std::abs(phi) < 1)) throw ConfigError("AR coefficients must satisfy |phi| < 1");
    for (double s : {ref.within, ref.between, model.within, model.between})
      if (!(s >= 0 && s < 1)) throw ConfigError("dependence strengths must lie in [0, 1)");
    if (!(mu_lo <= mu_hi) || !(0 <= sigma_lo && sigma_lo <= sigma_hi)) throw ConfigError("invalid mean or scale range");
  }
};

/// Zig-zag order over (variable, location) columns i*s+j: variables forward
/// at even locations and backward at odd ones, so consecutive entries share
/// either the location or the variable. For 2 x 2 this is 0-2-3-1.
inline std::vector<int> boustrophedon_order(std::size_t d, std::size_t s) {
  std::vector<int> order;
  for (std::size_t j = 0; j < s; ++j)
    for (std::size_t k = 0; k < d; ++k) {
      const std::size_t i = j % 2 == 0 ? k : d - 1 - k;
      order.push_back(static_cast<int>(i * s + j));
    }
  return order;
}

/// Gaussian D-vine of the innovations. An edge's conditioned pair gets the
/// within strength when it shares the location, the between strength when it
/// shares the variable and independence otherwise.
inline VineModel innovation_vine(std::size_t d, std::size_t s, const DependenceStrength& str) {
  const auto structure = d_vine(boustrophedon_order(d, s));
  CopulaLevels cop;
  for (const auto& level : structure.levels) {
    std::vector<PairCopulaSpec> specs;
    for (const Edge& e : level) {
      const auto ia = static_cast<std::size_t>(e.a) / s, ja = static_cast<std::size_t>(e.a) % s;
      const auto ib = static_cast<std::size_t>(e.b) / s, jb = static_cast<std::size_t>(e.b) % s;
      const double rho = ja == jb ? str.within : ia == ib ? str.between : 0.0;
      specs.push_back(rho == 0.0 ? PairCopulaSpec::independence() : PairCopulaSpec::gaussian(rho));
    }
    cop.push_back(std::move(specs));
  }
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < s; ++j) labels.push_back("v" + std::to_string(i + 1) + "@l" + std::to_string(j + 1));
  return VineModel(structure, cop, labels);
}

struct MarginTruth {
  std::vector<double> mu, sigma;  // per column
};

struct SimTruth {
  MarginTruth ref, model;
  VineModel ref_vine, model_vine;
};

struct SimResult {
  PanelDataset rc, rp, mc, mp;
  SimTruth truth;
};

namespace detail {

// AR(1) path with Z_0 = 0 after burn_in discarded steps; innovations are
// standard normal scores of the vine sample.
inline Matrix ar1_paths(const VineModel& vine, double phi, std::size_t n, std::size_t burn_in, std::uint64_t seed) {
  const Matrix U = vine.simulate(n + burn_in, seed);
  Matrix Z(static_cast<Eigen::Index>(n), U.cols());
  Eigen::RowVectorXd z = Eigen::RowVectorXd::Zero(U.cols());
  for (Eigen::Index t = 0; t < U.rows(); ++t) {
    for (Eigen::Index k = 0; k < U.cols(); ++k) z(k) = phi * z(k) + norm_quantile(U(t, k));
    if (t >= static_cast<Eigen::Index>(burn_in)) Z.row(t - static_cast<Eigen::Index>(burn_in)) = z;
  }
  return Z;
}

inline PanelDataset sim_panel(const SimConfig& c, const Matrix& Z, const MarginTruth& m, std::size_t t0, Period period) {
  PanelDataset p;
  for (std::size_t i = 0; i < c.n_vars; ++i) p.variables.push_back({"v" + std::to_string(i + 1), "gaussian"});
  for (std::size_t j = 0; j < c.n_locs; ++j) p.locations.push_back({"l" + std::to_string(j + 1)});
  p.period = period;
  p.values.resize(Z.rows(), Z.cols());
  const double T = static_cast<double>(c.T);
  for (Eigen::Index r = 0; r < Z.rows(); ++r) {
    const std::size_t t = t0 + static_cast<std::size_t>(r);  // 1-based day index
    p.dates.push_back(c.start + std::chrono::days(static_cast<int>(t - 1)));
    const double season = std::sin(c.seasonal_frequency * 2.0 * std::numbers::pi * static_cast<double>(t) / T);
    for (Eigen::Index k = 0; k < Z.cols(); ++k)
      p.values(r, k) = m.mu[static_cast<std::size_t>(k)] + m.sigma[static_cast<std::size_t>(k)] * season + Z(r, k);
  }
  return p;
}

inline MarginTruth draw_margins(const SimConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  MarginTruth m;
  for (std::size_t k = 0; k < c.n_vars * c.n_locs; ++k) {
    m.mu.push_back(c.mu_lo + (c.mu_hi - c.mu_lo) * rng.uniform());
    m.sigma.push_back(c.sigma_lo + (c.sigma_hi - c.sigma_lo) * rng.uniform());
  }
  return m;
}

}  // namespace detail

/// Calibration covers days 1..T and projection days T+1..2T, each with its
/// own innovation draw. Deterministic per seed.
inline SimResult generate(const SimConfig& c) {
  c.check();
  SimResult r;
  r.truth.ref_vine = innovation_vine(c.n_vars, c.n_locs, c.ref);
  r.truth.model_vine = innovation_vine(c.n_vars, c.n_locs, c.model);
  r.truth.ref = detail::draw_margins(c, derive_seed(c.seed, 0));
  r.truth.model = detail::draw_margins(c, derive_seed(c.seed, 1));
  auto path = [&](const VineModel& v, double phi, std::uint64_t stream) {
    return detail::ar1_paths(v, phi, c.T, c.burn_in, derive_seed(c.seed, stream));
  };
  r.rc = detail::sim_panel(c, path(r.truth.ref_vine, c.phi_ref, 2), r.truth.ref, 1, Period::rc);
  r.rp = detail::sim_panel(c, path(r.truth.ref_vine, c.phi_ref, 3), r.truth.ref, c.T + 1, Period::rp);
  r.mc = detail::sim_panel(c, path(r.truth.model_vine, c.phi_model, 4), r.truth.model, 1, Period::mc);
  r.mp = detail::sim_panel(c, path(r.truth.model_vine, c.phi_model, 5), r.truth.model, c.T + 1, Period::mp);
  return r;
}

/// Period of the seasonal cycle in days (for the epoch season clock).
inline double seasonal_period(const SimConfig& c) { return static_cast<double>(c.T) / c.seasonal_frequency; }

inline const std::vector<double>& strength_grid() {
  static const std::vector<double> g{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99};
  return g;
}

}  // namespace vinebc
