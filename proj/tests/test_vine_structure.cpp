#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vinebc/vine_structure.hpp"

using namespace vinebc;

namespace {

VineStructure dvine123(std::vector<Edge> level2) {
  VineStructure v;
  v.variables = {1, 2, 3};
  v.truncation = 2;
  v.levels = {{Edge(1, 2), Edge(2, 3)}, std::move(level2)};
  return v;
}

}  // namespace

TEST(EdgeSupport, Examples) {
  EXPECT_EQ(edge_support(Edge(1, 2)), (std::vector<int>{1, 2}));
  EXPECT_EQ(edge_support(Edge(1, 3, {2})), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(edge_support(Edge(5, 2, {4})), (std::vector<int>{2, 4, 5}));
}

TEST(Edge, NormalisesOrder) {
  Edge e(5, 2, {4, 1});
  EXPECT_EQ(e.a, 2);
  EXPECT_EQ(e.b, 5);
  EXPECT_EQ(e.cond, (std::vector<int>{1, 4}));
  EXPECT_EQ(e.level(), 3u);
}

TEST(Validate, DVineIsValid) { EXPECT_TRUE(validate(dvine123({Edge(1, 3, {2})})).empty()); }

TEST(Validate, WrongConditioningSetSize) {
  const auto v = validate(dvine123({Edge(1, 3)}));
  ASSERT_FALSE(v.empty());
  EXPECT_NE(v.front().what.find("conditioning set"), std::string::npos);
  EXPECT_EQ(v.front().level, 2);
}

TEST(Validate, DuplicatedFirstLevelEdge) {
  VineStructure s;
  s.variables = {1, 2, 3};
  s.truncation = 1;
  s.levels = {{Edge(1, 2), Edge(1, 2)}};
  const auto v = validate(s);
  ASSERT_FALSE(v.empty());
  bool cycle = false;
  for (const auto& x : v) cycle |= x.what.find("spanning tree") != std::string::npos;
  EXPECT_TRUE(cycle);
}

TEST(Validate, ProximityViolation) {
  // (1,2),(3,4),(2,3) then (1,4|?) cannot join non-adjacent nodes
  VineStructure s;
  s.variables = {1, 2, 3, 4};
  s.truncation = 2;
  s.levels = {{Edge(1, 2), Edge(2, 3), Edge(3, 4)}, {Edge(1, 3, {2}), Edge(1, 4, {2})}};
  EXPECT_FALSE(validate(s).empty());
}

TEST(Validate, EdgeCountAndTruncation) {
  VineStructure s;
  s.variables = {1, 2, 3};
  s.truncation = 1;
  s.levels = {{Edge(1, 2)}};
  EXPECT_FALSE(validate(s).empty());
  s.truncation = 3;
  EXPECT_FALSE(validate(s).empty());
}

TEST(Validate, RandomVinesPass) {
  std::mt19937_64 gen(123);
  for (int rep = 0; rep < 200; ++rep) {
    const int d = 2 + rep % 9;
    std::vector<int> vars(static_cast<std::size_t>(d));
    std::iota(vars.begin(), vars.end(), 1);
    const int T = 1 + static_cast<int>(gen() % static_cast<std::uint64_t>(d - 1));
    const auto vs = oracle::random_rvine(vars, T, gen);
    EXPECT_TRUE(validate(vs).empty()) << rep;
  }
}

TEST(Validate, SupportsOfLevelAreNodesOfNext) {
  std::mt19937_64 gen(5);
  std::vector<int> vars{1, 2, 3, 4, 5, 6, 7};
  const auto vs = oracle::random_rvine(vars, 6, gen);
  const auto ends = resolve_endpoints(vs);
  for (int t = 2; t <= 6; ++t) {
    const auto& prev = vs.level(t - 1);
    for (std::size_t k = 0; k < vs.level(t).size(); ++k) {
      const Edge& e = vs.level(t)[k];
      auto [n1, n2] = ends[static_cast<std::size_t>(t - 1)][k];
      std::vector<int> u;
      auto s1 = edge_support(prev[n1]), s2 = edge_support(prev[n2]);
      std::set_union(s1.begin(), s1.end(), s2.begin(), s2.end(), std::back_inserter(u));
      EXPECT_EQ(u, edge_support(e));
    }
  }
}

TEST(DisjointSetUnion, Examples) {
  DisjointSetUnion dsu(4);
  EXPECT_EQ(dsu.find(2), 2u);
  EXPECT_EQ(dsu.unite(1, 2), DisjointSetUnion::UnionResult::merged);
  EXPECT_EQ(dsu.find(1), dsu.find(2));
  EXPECT_EQ(dsu.unite(2, 3), DisjointSetUnion::UnionResult::merged);
  EXPECT_EQ(dsu.unite(1, 3), DisjointSetUnion::UnionResult::already_same);
  EXPECT_EQ(dsu.components(), 2u);
  EXPECT_THROW(dsu.find(4), std::out_of_range);
}

TEST(DisjointSetUnion, ComponentCountProperty) {
  std::mt19937_64 gen(9);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 30;
    DisjointSetUnion dsu(n);
    std::size_t merged = 0;
    for (int k = 0; k < 40; ++k) {
      if (dsu.unite(gen() % n, gen() % n) == DisjointSetUnion::UnionResult::merged) ++merged;
      const std::size_t x = gen() % n;
      EXPECT_EQ(dsu.find(dsu.find(x)), dsu.find(x));
    }
    EXPECT_EQ(dsu.components(), n - merged);
  }
}

TEST(StructureFile, RoundTrip) {
  std::mt19937_64 gen(77);
  auto vs = oracle::random_rvine({1, 2, 3, 4, 5, 6}, 4, gen);
  vs.levels[1][0].bridge = true;
  std::stringstream ss;
  write_structure(ss, vs);
  const auto back = read_structure(ss);
  EXPECT_EQ(back.variables, vs.variables);
  EXPECT_EQ(back.truncation, vs.truncation);
  ASSERT_EQ(back.levels.size(), vs.levels.size());
  for (std::size_t t = 0; t < vs.levels.size(); ++t) {
    EXPECT_EQ(back.levels[t], vs.levels[t]);
    for (std::size_t k = 0; k < vs.levels[t].size(); ++k) EXPECT_EQ(back.levels[t][k].bridge, vs.levels[t][k].bridge);
  }
}

TEST(StructureFile, ParsesWithoutHeaders) {
  std::istringstream in("1,1,2,\n1,2,3,\n2,1,3,2\n");
  const auto vs = read_structure(in);
  EXPECT_EQ(vs.variables, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(vs.truncation, 2);
  EXPECT_TRUE(validate(vs).empty());
}

TEST(StructureFile, RejectsGarbage) {
  std::istringstream bad("1,1,x,\n");
  EXPECT_THROW(read_structure(bad), DataError);
  std::istringstream desc("2,1,3,2\n1,1,2,\n");
  EXPECT_THROW(read_structure(desc), DataError);
}
