#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "vinebc/pair_copula.hpp"
#include "vinebc/stats.hpp"

using namespace vinebc;

namespace {

std::vector<PairCopulaSpec> family_grid() {
  return {PairCopulaSpec::independence(), PairCopulaSpec::gaussian(0.7),   PairCopulaSpec::gaussian(-0.4),
          PairCopulaSpec::clayton(2.0),   PairCopulaSpec::clayton(1.5, 90), PairCopulaSpec::clayton(0.8, 180),
          PairCopulaSpec::clayton(3.0, 270), PairCopulaSpec::gumbel(1.8),  PairCopulaSpec::gumbel(2.5, 90),
          PairCopulaSpec::gumbel(1.3, 180), PairCopulaSpec::gumbel(2.0, 270), PairCopulaSpec::frank(5.0),
          PairCopulaSpec::frank(-3.0)};
}

std::pair<std::vector<double>, std::vector<double>> sample(const PairCopulaSpec& s, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = rng.uniform();
    v[i] = hinv(s, rng.uniform(), u[i], HDirection::cond_on_first);
  }
  return {u, v};
}

}  // namespace

TEST(PairCopula, IndependenceBasics) {
  const auto s = PairCopulaSpec::independence();
  EXPECT_DOUBLE_EQ(density(s, 0.3, 0.8), 1.0);
  EXPECT_DOUBLE_EQ(hfunc(s, 0.3, 0.8), 0.3);
  EXPECT_DOUBLE_EQ(hinv(s, 0.3, 0.8), 0.3);
}

TEST(PairCopula, GaussianZeroIsIndependence) {
  EXPECT_NEAR(density(PairCopulaSpec::gaussian(0.0), 0.3, 0.7), 1.0, 1e-14);
}

TEST(PairCopula, GaussianMedianSymmetry) {
  for (double rho : {-0.9, -0.3, 0.2, 0.8}) EXPECT_NEAR(hfunc(PairCopulaSpec::gaussian(rho), 0.5, 0.5), 0.5, 1e-14);
}

TEST(PairCopula, DensityMatchesMixedDerivativeOfCdf) {
  const double h = 1e-4;
  for (const auto& s : family_grid()) {
    for (double u : {0.2, 0.5, 0.85}) {
      for (double v : {0.3, 0.5, 0.7}) {
        const double fd = (oracle::cdf(s, u + h, v + h) - oracle::cdf(s, u + h, v - h) -
                           oracle::cdf(s, u - h, v + h) + oracle::cdf(s, u - h, v - h)) /
                          (4 * h * h);
        EXPECT_NEAR(density(s, u, v), fd, 1e-4 * std::max(1.0, fd)) << describe(s) << " at " << u << "," << v;
      }
    }
  }
}

TEST(PairCopula, GaussianDensityAtCenter) {
  const double h = 1e-4;
  const auto s = PairCopulaSpec::gaussian(0.5);
  const double fd = (oracle::cdf(s, 0.5 + h, 0.5 + h) - oracle::cdf(s, 0.5 + h, 0.5 - h) -
                     oracle::cdf(s, 0.5 - h, 0.5 + h) + oracle::cdf(s, 0.5 - h, 0.5 - h)) /
                    (4 * h * h);
  EXPECT_NEAR(density(s, 0.5, 0.5), fd, 1e-5);
}

TEST(PairCopula, HfuncMatchesFiniteDifferences) {
  const double h = 1e-5;
  for (const auto& s : family_grid()) {
    for (int i = 1; i < 10; ++i) {
      for (int j = 1; j < 10; ++j) {
        const double u = i / 10.0, v = j / 10.0;
        const double dv = (oracle::cdf(s, u, v + h) - oracle::cdf(s, u, v - h)) / (2 * h);
        const double du = (oracle::cdf(s, u + h, v) - oracle::cdf(s, u - h, v)) / (2 * h);
        EXPECT_NEAR(hfunc(s, u, v, HDirection::cond_on_second), dv, 1e-6) << describe(s);
        EXPECT_NEAR(hfunc(s, u, v, HDirection::cond_on_first), du, 1e-6) << describe(s);
      }
    }
  }
}

TEST(PairCopula, GaussianHfuncSpecExample) {
  const double h = 1e-5;
  const auto s = PairCopulaSpec::gaussian(0.7);
  const double fd = (oracle::cdf(s, 0.9, 0.2 + h) - oracle::cdf(s, 0.9, 0.2 - h)) / (2 * h);
  EXPECT_NEAR(hfunc(s, 0.9, 0.2), fd, 1e-6);
}

TEST(PairCopula, HinvRoundTripOnGrid) {
  for (const auto& s : family_grid()) {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      for (int j = 0; j < 20; ++j) {
        const double w = (i + 0.5) / 20.0, v = (j + 0.5) / 20.0;
        for (auto dir : {HDirection::cond_on_second, HDirection::cond_on_first}) {
          const double x = hinv(s, w, v, dir);
          const double back = dir == HDirection::cond_on_second ? hfunc(s, x, v, dir) : hfunc(s, v, x, dir);
          worst = std::max(worst, std::abs(back - w));
        }
      }
    }
    EXPECT_LT(worst, 1e-9) << describe(s);
  }
}

TEST(PairCopula, GumbelHinvConvergesInExtremeCorners) {
  // Newton stalls at rounding noise of log(w) here
  const auto s = PairCopulaSpec::gumbel(3.3);
  for (auto [w, v] : {std::pair{2.7894680928689246e-10, 0.99990388834793864}, {7.1941330303253834e-09, 0.99849656080702243},
                      {1e-10, 1 - 1e-10}, {1 - 1e-10, 1e-10}}) {
    const double u = hinv(s, w, v);
    EXPECT_NEAR(hfunc(s, u, v), w, 1e-9 + 1e-6 * w);
  }
}

TEST(PairCopula, HinvMatchesBisection) {
  const auto s = PairCopulaSpec::gaussian(-0.4);
  const double x = oracle::bisect([&](double u) { return hfunc(s, u, 0.8); }, 0.25);
  EXPECT_NEAR(hinv(s, 0.25, 0.8), x, 1e-9);
}

TEST(PairCopula, HfuncMonotoneInU) {
  for (const auto& s : family_grid()) {
    for (double v : {0.01, 0.3, 0.6, 0.99}) {
      double prev = -1.0;
      for (int i = 1; i < 200; ++i) {
        const double h = hfunc(s, i / 200.0, v);
        EXPECT_GE(h, prev) << describe(s);
        prev = h;
      }
    }
  }
}

TEST(PairCopula, DensityIntegratesToOne) {
  // moderate dependence: the midpoint rule cannot resolve strong tail peaks
  const std::vector<PairCopulaSpec> specs{
      PairCopulaSpec::gaussian(0.7),    PairCopulaSpec::gaussian(-0.4),   PairCopulaSpec::clayton(1.0),
      PairCopulaSpec::clayton(1.0, 90), PairCopulaSpec::clayton(0.8, 180), PairCopulaSpec::clayton(1.2, 270),
      PairCopulaSpec::gumbel(1.5),      PairCopulaSpec::gumbel(1.5, 90),   PairCopulaSpec::gumbel(1.3, 180),
      PairCopulaSpec::gumbel(1.6, 270), PairCopulaSpec::frank(5.0),        PairCopulaSpec::frank(-3.0)};
  for (const auto& s : specs) {
    double total = 0.0;
    const int m = 200;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) total += density(s, (i + 0.5) / m, (j + 0.5) / m);
    total /= double(m) * m;
    EXPECT_NEAR(total, 1.0, 1e-3) << describe(s);
  }
}

TEST(PairCopula, Rotation180IsSurvivalDensity) {
  for (auto base : {PairCopulaSpec::clayton(2.0), PairCopulaSpec::gumbel(1.7)}) {
    auto rot = base;
    rot.rotation = 180;
    for (double u : {0.1, 0.4, 0.9})
      for (double v : {0.2, 0.6}) EXPECT_NEAR(density(rot, u, v), density(base, 1 - u, 1 - v), 1e-12);
  }
}

TEST(PairCopula, DomainErrors) {
  EXPECT_THROW(density(PairCopulaSpec::gaussian(1.0), 0.5, 0.5), DomainError);
  EXPECT_THROW(density(PairCopulaSpec::clayton(-1.0), 0.5, 0.5), DomainError);
  EXPECT_THROW(density(PairCopulaSpec::gumbel(0.5), 0.5, 0.5), DomainError);
  EXPECT_THROW(density(PairCopulaSpec::frank(0.0), 0.5, 0.5), DomainError);
  EXPECT_THROW(density(PairCopulaSpec{Family::gaussian, 0.3, 90}, 0.5, 0.5), DomainError);
}

TEST(TauMaps, GaussianValues) {
  EXPECT_DOUBLE_EQ(tau_to_param(Family::gaussian, 0.0), 0.0);
  EXPECT_NEAR(tau_to_param(Family::gaussian, 0.5), std::sin(M_PI * 0.25), 1e-12);
}

TEST(TauMaps, FrankRoundTrip) {
  EXPECT_NEAR(param_to_tau(Family::frank, tau_to_param(Family::frank, 0.3)), 0.3, 1e-6);
}

TEST(TauMaps, MutualInversesOnParameterGrid) {
  for (double r : {-0.95, -0.5, 0.1, 0.6, 0.95})
    EXPECT_NEAR(tau_to_param(Family::gaussian, param_to_tau(Family::gaussian, r)), r, 1e-8);
  for (double th : {0.1, 1.0, 5.0, 20.0}) {
    EXPECT_NEAR(tau_to_param(Family::clayton, param_to_tau(Family::clayton, th)), th, 1e-8 * th);
    EXPECT_NEAR(tau_to_param(Family::clayton, param_to_tau(Family::clayton, th, 90), 90), th, 1e-8 * th);
  }
  for (double th : {1.0, 1.5, 4.0, 12.0}) EXPECT_NEAR(tau_to_param(Family::gumbel, param_to_tau(Family::gumbel, th)), th, 1e-8 * th);
  for (double th : {-30.0, -2.0, 0.5, 8.0, 35.0})
    EXPECT_NEAR(tau_to_param(Family::frank, param_to_tau(Family::frank, th)), th, 1e-8 * std::abs(th));
}

TEST(TauMaps, UnsupportedSignNamesRotation) {
  try {
    tau_to_param(Family::clayton, -0.4);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("90"), std::string::npos);
  }
}

TEST(TauMaps, ClaytonAnalyticTau) { EXPECT_NEAR(param_to_tau(Family::clayton, 2.0), 0.5, 1e-14); }

TEST(TauMaps, MatchSimulatedKendallTau) {
  for (const auto& s : family_grid()) {
    auto [u, v] = sample(s, 100000, 11);
    EXPECT_NEAR(kendall_tau(u, v), param_to_tau(s), 0.01) << describe(s);
  }
  auto [u, v] = sample(PairCopulaSpec::gaussian(tau_to_param(Family::gaussian, 0.5)), 100000, 5);
  EXPECT_NEAR(kendall_tau(u, v), 0.5, 0.01);
}

TEST(FitPair, RecoversGaussian) {
  auto [u, v] = sample(PairCopulaSpec::gaussian(0.6), 5000, 1);
  const auto fit = fit_pair(u, v);
  EXPECT_EQ(fit.spec.family, Family::gaussian);
  EXPECT_NEAR(fit.spec.parameter, 0.6, 0.05);
}

TEST(FitPair, IndependentDataGivesIndependence) {
  Rng rng(9);
  std::vector<double> u(5000), v(5000);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(), v[i] = rng.uniform();
  FitPairOptions opt;
  opt.indep_test_level = 0.0;  // AIC alone
  EXPECT_EQ(fit_pair(u, v, opt).spec.family, Family::independence);
  EXPECT_EQ(fit_pair(u, v).spec.family, Family::independence);
}

TEST(FitPair, ClaytonTauPreserved) {
  auto [u, v] = sample(PairCopulaSpec::clayton(2.0), 5000, 4);
  const auto fit = fit_pair(u, v);
  EXPECT_NEAR(param_to_tau(fit.spec), 0.5, 0.05);
  EXPECT_EQ(fit.spec.family, Family::clayton);
}

TEST(FitPair, NegativeDependenceUsesRotation) {
  auto [u, v] = sample(PairCopulaSpec::gumbel(2.0, 90), 3000, 8);
  const auto fit = fit_pair(u, v);
  EXPECT_LT(param_to_tau(fit.spec), -0.4);
}

TEST(FitPair, RejectsShortSamples) {
  std::vector<double> u(10, 0.5);
  EXPECT_THROW(fit_pair(u, u), DataError);
}
