#include <gtest/gtest.h>

#include <numbers>

#include "vinebc/stats.hpp"
#include "vinebc/synthetic.hpp"

using namespace vinebc;

namespace {

std::vector<double> col(const PanelDataset& p, std::size_t k) {
  const auto c = p.values.col(static_cast<Eigen::Index>(k));
  return {c.data(), c.data() + c.size()};
}

// latent Z recovered from a panel by removing the known seasonal mean
std::vector<double> latent(const SimConfig& c, const PanelDataset& p, const MarginTruth& m, std::size_t k, std::size_t t0) {
  std::vector<double> z(p.n_time());
  for (std::size_t r = 0; r < z.size(); ++r) {
    const double t = static_cast<double>(t0 + r);
    z[r] = p.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) - m.mu[k] -
           m.sigma[k] * std::sin(4.0 * 2.0 * std::numbers::pi * t / static_cast<double>(c.T));
  }
  return z;
}

double lag1(const std::vector<double>& x) {
  const double m = mean(x);
  double num = 0, den = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    den += (x[t] - m) * (x[t] - m);
    if (t) num += (x[t] - m) * (x[t - 1] - m);
  }
  return num / den;
}

double gauss_tau(double rho) { return 2.0 / std::numbers::pi * std::asin(rho); }

}  // namespace

TEST(Synthetic, BoustrophedonOrder) {
  EXPECT_EQ(boustrophedon_order(2, 2), (std::vector<int>{0, 2, 3, 1}));
  for (std::size_t d = 1; d <= 4; ++d)
    for (std::size_t s = 1; s <= 4; ++s) {
      const auto o = boustrophedon_order(d, s);
      ASSERT_EQ(o.size(), d * s);
      for (std::size_t k = 1; k < o.size(); ++k) {
        const int a = o[k - 1], b = o[k];
        const bool same_loc = a % static_cast<int>(s) == b % static_cast<int>(s);
        const bool same_var = a / static_cast<int>(s) == b / static_cast<int>(s);
        EXPECT_TRUE(same_loc || same_var);
      }
    }
}

TEST(Synthetic, InnovationVineEdgeRoles) {
  const auto v = innovation_vine(2, 2, {0.3, 0.8});
  EXPECT_TRUE(validate(v.structure()).empty());
  const auto& l1 = v.structure().levels[0];
  ASSERT_EQ(l1.size(), 3u);
  EXPECT_EQ(v.copula(Edge(0, 2)).parameter, 0.3);  // v1,v2 at l1
  EXPECT_EQ(v.copula(Edge(2, 3)).parameter, 0.8);  // v2 at l1,l2
  EXPECT_EQ(v.copula(Edge(1, 3)).parameter, 0.3);  // v1,v2 at l2
  EXPECT_EQ(v.copula(Edge(0, 3, {2})).family, Family::independence);
  EXPECT_EQ(v.copula(Edge(0, 1, {2, 3})).parameter, 0.8);
}

TEST(Synthetic, DegenerateCaseIsIidAtTheMean) {
  SimConfig c;
  c.T = 20000;
  c.phi_ref = c.phi_model = 0.0;
  c.sigma_lo = c.sigma_hi = 0.0;
  c.seed = 3;
  const auto r = generate(c);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto x = col(r.rc, k);
    EXPECT_NEAR(mean(x), r.truth.ref.mu[k], 0.03);
    EXPECT_NEAR(variance(x), 1.0, 0.04);
    EXPECT_NEAR(lag1(x), 0.0, 0.03);
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_NEAR(kendall_tau(col(r.rc, a), col(r.rc, b)), 0.0, 0.02);
}

TEST(Synthetic, Ar1MomentsAndInnovationTaus) {
  SimConfig c;
  c.T = 100000;
  c.ref = {0.5, 0.9};
  c.seed = 11;
  const auto r = generate(c);
  std::vector<std::vector<double>> eps(4);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto z = latent(c, r.rc, r.truth.ref, k, 1);
    EXPECT_NEAR(lag1(z), 0.6, 0.02);
    const double v = variance(z);
    EXPECT_NEAR(v / (1.0 / (1.0 - 0.36)), 1.0, 0.05);
    for (std::size_t t = 1; t < z.size(); ++t) eps[k].push_back(z[t] - 0.6 * z[t - 1]);
  }
  // columns 0,1 = v1@l1,l2 ; 2,3 = v2@l1,l2
  EXPECT_NEAR(kendall_tau(eps[0], eps[2]), gauss_tau(0.5), 0.03);
  EXPECT_NEAR(kendall_tau(eps[2], eps[3]), gauss_tau(0.9), 0.03);
  EXPECT_NEAR(kendall_tau(eps[1], eps[3]), gauss_tau(0.5), 0.03);
  // (0,3 | 2) is independent, so rho_03 = rho_02 * rho_23
  EXPECT_NEAR(kendall_tau(eps[0], eps[3]), gauss_tau(0.5 * 0.9), 0.03);
}

TEST(Synthetic, PeriodsDatesAndDeterminism) {
  SimConfig c;
  c.seed = 42;
  c.model = {0.7, 0.2};
  const auto a = generate(c), b = generate(c);
  EXPECT_TRUE(a.rc.values == b.rc.values && a.mp.values == b.mp.values && a.rp.values == b.rp.values);
  EXPECT_EQ(a.rc.n_time(), 200u);
  EXPECT_EQ(a.rc.dates.front(), c.start);
  EXPECT_EQ(a.rp.dates.front(), c.start + std::chrono::days(200));
  EXPECT_EQ(a.mp.dates.back(), c.start + std::chrono::days(399));
  EXPECT_EQ(a.mc.period, Period::mc);
  EXPECT_NE(a.truth.ref.mu, a.truth.model.mu);
  for (double s : a.truth.model.sigma) EXPECT_TRUE(s >= 0.5 && s <= 2.0);
  EXPECT_FALSE(a.rc.values == a.rp.values);
  c.seed = 43;
  EXPECT_FALSE(generate(c).rc.values == a.rc.values);
  EXPECT_DOUBLE_EQ(seasonal_period(c), 50.0);
  EXPECT_EQ(strength_grid().size(), 11u);
}

TEST(Synthetic, InvalidConfigurations) {
  SimConfig c;
  c.phi_ref = 1.0;
  EXPECT_THROW(generate(c), ConfigError);
  c = {};
  c.model.between = 1.0;
  EXPECT_THROW(generate(c), ConfigError);
  c = {};
  c.ref.within = -0.1;
  EXPECT_THROW(generate(c), ConfigError);
}
