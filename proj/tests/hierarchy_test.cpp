#include <gtest/gtest.h>

#include <random>

#include "dpmn/hierarchy.hpp"
#include "test_support.hpp"

using namespace dpmn;

TEST(Hierarchy, ToySpecBuildsExpectedAggregationMatrix) {
  const auto h = fixtures::toy_hierarchy();
  ASSERT_EQ(h.n_agg(), 3u);
  ASSERT_EQ(h.n_bottom(), 4u);
  const MatrixI expected(3, 4, {1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1});
  EXPECT_EQ(h.agg_matrix(), expected);
  EXPECT_TRUE(h.has_total());
  ASSERT_EQ(h.levels().size(), 3u);
  EXPECT_EQ(h.levels()[0].label, "total");
}

TEST(Hierarchy, SummationMatrixStacksIdentityUnderA) {
  const auto s = build_summation_matrix(fixtures::toy_hierarchy());
  ASSERT_EQ(s.rows(), 7u);
  ASSERT_EQ(s.cols(), 4u);
  const MatrixI expected(7, 4, {1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_EQ(s, expected);
}

TEST(Hierarchy, NoAggregatesGivesIdentity) {
  const auto h = parse_hierarchy_spec(R"({"bottom": ["x", "y", "z"]})");
  EXPECT_EQ(h.n_agg(), 0u);
  EXPECT_EQ(build_summation_matrix(h), MatrixI::identity(3));
}

TEST(Hierarchy, ZeroRowIsRejected) {
  EXPECT_THROW(HierarchyStructure({"a", "b"}, {"empty"}, MatrixI(1, 2, {0, 0})), std::invalid_argument);
  EXPECT_THROW(HierarchyStructure({"a", "b"}, {"x", "y"}, MatrixI(1, 2, {1, 1})), std::invalid_argument);
  EXPECT_THROW(HierarchyStructure({"a", "b"}, {"x"}, MatrixI(1, 2, {2, 1})), std::invalid_argument);
}

TEST(Hierarchy, AggregateValuesMatchesWorkedColumn) {
  const auto h = fixtures::toy_hierarchy();
  const MatrixD yb(4, 1, {1, 2, 3, 4});
  const auto full = aggregate_values(h, yb);
  EXPECT_EQ(full.data(), (std::vector<double>{10, 3, 7, 1, 2, 3, 4}));
  const auto zeros = aggregate_values(h, MatrixD(4, 5));
  for (double v : zeros.data()) EXPECT_EQ(v, 0.0);
}

TEST(Hierarchy, SingleSeriesDuplicates) {
  const HierarchyStructure h({"only"}, {"total"}, MatrixI(1, 1, {1}));
  const MatrixD y(1, 3, {5, 6, 7});
  const auto full = aggregate_values(h, y);
  EXPECT_EQ(full.row(0), full.row(1));
  EXPECT_EQ(full.row(1), (std::vector<double>{5, 6, 7}));
}

TEST(Hierarchy, AggregateValuesRejectsWrongBottomCount) {
  const auto h = fixtures::toy_hierarchy();
  EXPECT_THROW(aggregate_values(h, MatrixD(3, 2)), std::invalid_argument);
  EXPECT_THROW(aggregate_values(h, MatrixD(4, 0)), std::invalid_argument);
}

TEST(Hierarchy, TotalEqualsSumOfFourBottoms) {
  const auto h = fixtures::toy_hierarchy();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 50);
  MatrixD yb(4, 20);
  for (auto& v : yb.data()) v = d(rng);
  const auto full = aggregate_values(h, yb);
  for (std::size_t t = 0; t < 20; ++t) {
    EXPECT_EQ(full(0, t), yb(0, t) + yb(1, t) + yb(2, t) + yb(3, t));
  }
}

TEST(Hierarchy, CoherenceResidual) {
  const auto h = fixtures::toy_hierarchy();
  auto full = aggregate_values(h, MatrixD(4, 2, {1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(coherence_residual(h, full), 0.0);
  full(1, 1) += 1.0;
  EXPECT_EQ(coherence_residual(h, full), 1.0);
}

TEST(Hierarchy, CoherenceResidualPropertyRandomPanels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto h = fixtures::random_three_level(9, 3, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    MatrixD yb(9, 12);
    for (auto& v : yb.data()) v = std::floor(u(rng));
    EXPECT_EQ(coherence_residual(h, aggregate_values(h, yb)), 0.0);
  }
}

TEST(HierarchySpec, RejectsBadDocuments) {
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a"], "extra": 1})"), InputError);
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a", "b"], "aggregates": [{"name": "t", "members": ["a", "q"]}]})"),
               InputError);
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a"], "aggregates": [{"name": "t", "members": ["a"]},
                                                                         {"name": "t", "members": ["a"]}]})"),
               InputError);
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a"], "aggregates": [{"name": "x", "children": ["y"]},
                                                                         {"name": "y", "children": ["x"]}]})"),
               InputError);
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a"], "aggregates": [{"name": "x", "members": ["a"], "colour": 2}]})"),
               InputError);
  EXPECT_THROW(parse_hierarchy_spec("not json"), InputError);
}

TEST(HierarchySpec, LevelsMustCoverEveryRowOnce) {
  EXPECT_THROW(parse_hierarchy_spec(R"({"bottom": ["a", "b"], "aggregates": [{"name": "t", "members": ["a", "b"]}],
                                        "levels": {"top": ["t"], "bottom": ["a"]}})"),
               InputError);
}

TEST(HierarchySpec, TourismShapedGroupedHierarchyHas555Rows) {
  const auto h = parse_hierarchy_spec(fixtures::tourism_like_spec());
  EXPECT_EQ(h.n_bottom(), 304u);
  EXPECT_EQ(h.n_rows(), 555u);
  std::size_t geography = 0;
  for (const char* lv : {"total", "state", "zone", "region"}) geography += h.level(lv).rows.size();
  EXPECT_EQ(geography, 111u);
  EXPECT_EQ(h.n_rows() - geography, 444u);
}

TEST(HierarchySpec, RoundTripThroughDocument) {
  const auto h = fixtures::toy_hierarchy();
  const auto again = parse_hierarchy_spec(to_hierarchy_spec(h));
  EXPECT_EQ(again.agg_matrix(), h.agg_matrix());
  EXPECT_EQ(again.agg_names(), h.agg_names());
  EXPECT_EQ(again.levels().size(), h.levels().size());
}
