#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "vinebc/evaluation.hpp"

using namespace vinebc;

namespace {

Matrix gaussian_sample(std::size_t n, std::size_t k, std::mt19937_64& gen) {
  std::normal_distribution<double> z;
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(gen);
  return m;
}

// W2 by enumerating every permutation
double brute_w2(const Matrix& a, const Matrix& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += (a.row(static_cast<Eigen::Index>(i)) - b.row(perm[i])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(a.rows()));
}

// textbook shortest-augmenting-path Hungarian method, O(n^3)
double hungarian_cost(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + j - 1] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) u[p[j]] += delta, v[j] -= delta;
        else minv[j] -= delta;
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[(p[j] - 1) * n + j - 1];
  return total;
}

double greedy_w2(const Matrix& a, const Matrix& b) {
  std::vector<bool> used(static_cast<std::size_t>(b.rows()), false);
  double c = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      if (!used[static_cast<std::size_t>(j)] && (best < 0 || (a.row(i) - b.row(j)).squaredNorm() < (a.row(i) - b.row(best)).squaredNorm())) best = j;
    used[static_cast<std::size_t>(best)] = true;
    c += (a.row(i) - b.row(best)).squaredNorm();
  }
  return std::sqrt(c / static_cast<double>(a.rows()));
}

PanelDataset daily_panel(Date start, std::size_t days, std::size_t d, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  PanelDataset p;
  for (std::size_t i = 0; i < d; ++i) p.variables.push_back({"v" + std::to_string(i), ""});
  for (std::size_t j = 0; j < s; ++j) p.locations.push_back({"L" + std::to_string(j)});
  for (std::size_t t = 0; t < days; ++t) p.dates.push_back(start + std::chrono::days(static_cast<int>(t)));
  p.values = gaussian_sample(days, d * s, gen);
  return p;
}

std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  std::vector<double> x(n);
  double prev = 0;
  for (std::size_t b = 0; b < 200; ++b) prev = phi * prev + z(gen);
  for (auto& v : x) v = prev = phi * prev + z(gen);
  return x;
}

}  // namespace

TEST(Wasserstein, Examples) {
  std::mt19937_64 gen(1);
  const Matrix A = gaussian_sample(300, 3, gen);
  EXPECT_NEAR(wasserstein2(A, A), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(wasserstein2(Matrix::Constant(1, 1, 0.0), Matrix::Constant(1, 1, 3.0)), 3.0);
  const Matrix N = gaussian_sample(1000, 2, gen);
  const Matrix shifted = N.rowwise() + Eigen::RowVector2d(1.0, 1.0);
  EXPECT_NEAR(wasserstein2(N, shifted), std::sqrt(2.0), 0.05);
  EXPECT_THROW(wasserstein2(Matrix(0, 2), N), DataError);
  EXPECT_THROW(wasserstein2(A, N), DataError);
}

TEST(Wasserstein, MatchesPermutationOracle) {
  std::mt19937_64 gen(2);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 2 + gen() % 6, k = 1 + gen() % 3;
    const Matrix a = gaussian_sample(n, k, gen), b = gaussian_sample(n, k, gen);
    EXPECT_NEAR(wasserstein2(a, b), brute_w2(a, b), 1e-12);
  }
}

TEST(Assignment, MatchesHungarianIncludingTies) {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> unif;
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n = 1 + gen() % 120;
    std::vector<double> cost(n * n);
    const bool ties = rep % 2 == 0;
    for (auto& c : cost) c = ties ? static_cast<double>(gen() % 5) : unif(gen);
    const auto match = detail::solve_assignment(cost, n);
    std::vector<bool> seen(n, false);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_LT(match[i], n);
      ASSERT_FALSE(seen[match[i]]);
      seen[match[i]] = true;
      total += cost[i * n + match[i]];
    }
    EXPECT_NEAR(total, hungarian_cost(cost, n), 1e-9) << n;
  }
}

TEST(Wasserstein, MetricPropertiesAndOptimality) {
  std::mt19937_64 gen(3);
  for (int rep = 0; rep < 25; ++rep) {
    const Matrix a = gaussian_sample(60, 2, gen), b = gaussian_sample(60, 2, gen) * 1.5, c = gaussian_sample(60, 2, gen).array() + 0.7;
    const double ab = wasserstein2(a, b), ba = wasserstein2(b, a), bc = wasserstein2(b, c), ac = wasserstein2(a, c);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ac, ab + bc + 1e-9);
    EXPECT_LE(ab, greedy_w2(a, b) + 1e-12);
  }
}

TEST(Wasserstein, SubsamplesLargeAndUnequalSamples) {
  std::mt19937_64 gen(4);
  const Matrix a = gaussian_sample(300, 2, gen), b = gaussian_sample(120, 2, gen);
  const auto r = wasserstein2_detail(a, b, {100, 9});
  EXPECT_EQ(r.points, 100u);
  EXPECT_TRUE(r.subsampled);
  EXPECT_EQ(r.distance, wasserstein2_detail(a, b, {100, 9}).distance);
  EXPECT_FALSE(wasserstein2_detail(b, b).subsampled);
  EXPECT_EQ(wasserstein2(a, a, {100, 3}), 0.0);
}

TEST(Improvement, Examples) {
  std::mt19937_64 gen(5);
  const Matrix ref = gaussian_sample(200, 2, gen);
  const Matrix raw = ref.array() + 2.0;
  const Matrix half = ref.array() + 1.0;
  EXPECT_NEAR(*improvement(ref, raw, ref), 1.0, 1e-12);
  EXPECT_NEAR(*improvement(ref, raw, raw), 0.0, 1e-12);
  EXPECT_NEAR(*improvement(ref, raw, half), 0.5, 1e-9);
  EXPECT_FALSE(improvement(ref, ref, raw).has_value());
}

TEST(SpatialCorrelation, CoherentAndWhiteNoise) {
  auto p = daily_panel(make_date(2000, 1, 1), 4745, 1, 22, 6);
  const auto bins = shortest_path_bins(rook_grid(2, 11));
  for (const auto& r : spatial_correlation(p, 0, bins).rho) EXPECT_LT(std::abs(r), 0.05);
  for (Eigen::Index c = 1; c < 22; ++c) p.values.col(c) = p.values.col(0) * (1.0 + 0.1 * static_cast<double>(c)) + Eigen::VectorXd::Constant(p.values.rows(), 3.0 * c);
  const auto coherent = spatial_correlation(p, 0, bins);
  EXPECT_EQ(coherent.radii.size(), bins.size());
  for (double r : coherent.rho) EXPECT_NEAR(r, 1.0, 1e-12);
  EXPECT_EQ(spatial_correlation(p, 0, bins, SpatialMode::anomaly).radii.size(), 0u);
}

TEST(SpatialCorrelation, AnomalyModeMatchesDirectFormula) {
  const auto p = daily_panel(make_date(2000, 1, 1), 50, 2, 4, 7);
  const auto g = rook_grid(1, 4);
  const auto bins = shortest_path_bins(g);
  const auto got = spatial_correlation(p, 1, bins, SpatialMode::anomaly);
  // direct: standardize, subtract spatial mean per time, average pair products
  const std::size_t n = 50, s = 4;
  std::vector<std::vector<double>> z(s, std::vector<double>(n));
  for (std::size_t j = 0; j < s; ++j) {
    double m = 0, v = 0;
    for (std::size_t t = 0; t < n; ++t) m += p(t, 1, j) / n;
    for (std::size_t t = 0; t < n; ++t) v += (p(t, 1, j) - m) * (p(t, 1, j) - m) / n;
    for (std::size_t t = 0; t < n; ++t) z[j][t] = (p(t, 1, j) - m) / std::sqrt(v);
  }
  double var = 0;
  std::map<int, double> num;
  for (std::size_t t = 0; t < n; ++t) {
    double c = 0;
    for (std::size_t j = 0; j < s; ++j) c += z[j][t] / s;
    for (std::size_t j = 0; j < s; ++j) var += (z[j][t] - c) * (z[j][t] - c) / (n * s);
    for (const auto& [r, pairs] : bins)
      for (auto [a, b] : pairs) num[r] += (z[a][t] - c) * (z[b][t] - c) / (n * pairs.size());
  }
  ASSERT_EQ(got.radii, (std::vector<int>{1, 2, 3}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got.rho[k], num[got.radii[k]] / var, 1e-12);
}

TEST(SpatialCorrelation, MseExamples) {
  SpatialCorrelation a{{1, 2, 3, 4, 5, 6}, {0.9, 0.8, 0.7, 0.6, 0.5, 0.55}, {}};
  auto b = a;
  EXPECT_EQ(spatial_corr_mse(a, b), 0.0);
  for (auto& r : b.rho) r += 0.1;
  EXPECT_NEAR(spatial_corr_mse(b, a), 0.01, 1e-12);
  b.radii.pop_back();
  EXPECT_THROW(spatial_corr_mse(b, a), DataError);
}

TEST(Acf, WhiteNoiseAr1AndProperties) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> z;
  std::vector<double> w(5000);
  for (auto& v : w) v = z(gen);
  const auto r = acf(w, 20);
  EXPECT_DOUBLE_EQ(r[0], 1.0);
  for (std::size_t k = 1; k <= 20; ++k) EXPECT_LT(std::abs(r[k]), 3.0 / std::sqrt(5000.0));
  const auto x = ar1(10000, 0.6, 9);
  const auto a = acf(x, 10);
  for (std::size_t k = 0; k <= 10; ++k) {
    EXPECT_NEAR(a[k], std::pow(0.6, static_cast<double>(k)), 0.03) << k;
    EXPECT_LE(std::abs(a[k]), 1.0);
  }
  for (double v : acf_sq_diff(x, x, 30)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(acf(std::vector<double>(100, 2.0), 5), DataError);
  EXPECT_THROW(acf_sq_diff(x, std::vector<double>(50, 1.0), 30), DataError);
}

TEST(BlockBootstrap, WholeYearsJointlyResampled) {
  const auto p = daily_panel(make_date(2001, 1, 1), 365 * 3, 2, 2, 10);
  const auto reps = block_bootstrap(p, 5, 20, 11);
  ASSERT_EQ(reps.size(), 20u);
  for (const auto& r : reps) {
    ASSERT_EQ(r.years.size(), 5u);
    EXPECT_EQ(r.panel.n_time(), 5u * 365);
    std::size_t row = 0;
    for (int y : r.years) {
      // each block is the whole source year, for every column at once
      for (std::size_t k = 0; k < 365; ++k, ++row) {
        const Date want = make_date(y, 1, 1) + std::chrono::days(static_cast<int>(k));
        ASSERT_EQ(r.panel.dates[row], want);
        const std::size_t src = static_cast<std::size_t>((want - p.dates[0]).count());
        ASSERT_TRUE(r.panel.values.row(static_cast<Eigen::Index>(row)) == p.values.row(static_cast<Eigen::Index>(src)));
      }
    }
  }
  const auto again = block_bootstrap(p, 5, 20, 11);
  for (std::size_t k = 0; k < 20; ++k) EXPECT_EQ(again[k].years, reps[k].years);
}

TEST(BlockBootstrap, PartialEdgeYearsAreDropped) {
  const auto p = daily_panel(make_date(2000, 7, 1), 365 * 3, 1, 1, 12);  // 2000-07-01 .. 2003-06-30
  std::size_t dropped = 0;
  const auto years = whole_years(p, &dropped);
  EXPECT_EQ(dropped, 2u);
  ASSERT_EQ(years.size(), 2u);
  EXPECT_EQ(years[0].year, 2001);
  EXPECT_EQ(years[1].rows.size(), 365u);
  EXPECT_THROW(block_bootstrap(daily_panel(make_date(2000, 1, 1), 400, 1, 1, 1), 2, 1, 0), DataError);
}

TEST(Evaluate, PerfectAndRawCorrections) {
  const auto ref = daily_panel(make_date(2001, 1, 1), 365 * 2, 2, 3, 13);
  auto raw = daily_panel(make_date(2001, 1, 1), 365 * 2, 2, 3, 14);
  raw.values.array() += 1.0;
  EvalOptions o;
  o.max_lag = 30;
  o.w2.max_points = 300;
  const auto reps = evaluate(ref, raw, {{"perfect", ref}, {"none", raw}}, o);
  ASSERT_EQ(reps.size(), 1u);
  const auto& m = reps[0].methods;
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].method, "raw");
  EXPECT_NEAR(*m[1].joint_improvement, 1.0, 1e-12);
  EXPECT_NEAR(*m[2].joint_improvement, 0.0, 1e-12);
  EXPECT_EQ(m[1].intervar_improvement.size(), 3u);
  EXPECT_EQ(m[1].spatial_improvement.size(), 2u);
  EXPECT_EQ(*m[1].spatial_corr_mse[0], 0.0);
  EXPECT_EQ(m[1].acf_mse, 0.0);
  EXPECT_EQ(m[1].acf_sq_diff.size(), 6u);
  EXPECT_TRUE(reps[0].w2_subsampled);
  o.n_rep = 4;
  o.n_blocks = 3;
  o.w2.max_points = 250;
  const auto boot = evaluate(ref, raw, {{"perfect", ref}}, o);
  ASSERT_EQ(boot.size(), 4u);
  for (const auto& r : boot) {
    EXPECT_EQ(r.years.size(), 3u);
    EXPECT_LE(*r.methods[1].joint_improvement, 1.0);
    EXPECT_NEAR(*r.methods[1].joint_improvement, 1.0, 1e-12);
  }
  auto short_panel = ref.select_rows({0, 1, 2});
  EXPECT_THROW(evaluate(ref, short_panel, {}, o), DataError);
}
