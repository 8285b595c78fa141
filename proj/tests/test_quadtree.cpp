#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "hfmm/quadtree.hpp"

using namespace hfmm;

namespace {

BoundaryDisc points_disc(const std::vector<Vec2>& pts) {
    BoundaryDisc d;
    d.n_half = static_cast<int>((pts.size() + 1) / 2);
    d.knots = pts;
    d.t.assign(pts.size(), 0.0);
    d.weight.assign(pts.size(), 1.0);
    d.normal.assign(pts.size(), Vec2{1.0, 0.0});
    d.density.assign(pts.size(), cplx(1.0, 0.0));
    return d;
}

TreeOptions kite_options() {
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{-0.5, 0.0};
    o.leaf_cap = 6;
    return o;
}

const BoundaryDisc& kite_disc() {
    static const BoundaryDisc d = discretize(kite(), 500);
    return d;
}

const Quadtree& kite_tree() {
    static const Quadtree t(kite_disc(), kite_options());
    return t;
}

void expect_partition(const Quadtree& tree) {
    const std::size_t n = tree.point_count();
    for (std::size_t i = 0; i < n; ++i) {
        const int leaf = tree.leaf_of(static_cast<int>(i));
        std::vector<int> seen(n, 0);
        for (int j : tree.near_points(leaf)) ++seen[j];
        for (int c : tree.chain(leaf))
            for (const InteractionEntry& e : tree.interaction_list(c))
                for (int j : tree.points_of(e.cell)) ++seen[j];
        for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(seen[j], 1) << "source " << i << " member " << j;
    }
}

}  // namespace

TEST(LevelDistance, Values) {
    EXPECT_DOUBLE_EQ(level_distance(4.0, 2), std::numbers::sqrt2 / 4.0);
    EXPECT_DOUBLE_EQ(level_distance(4.0, 3), std::numbers::sqrt2 / 8.0);
    EXPECT_DOUBLE_EQ(level_distance(3.0, 2), std::numbers::sqrt2 * 3.0 / 16.0);
    EXPECT_THROW(level_distance(4.0, -1), DomainError);
}

TEST(GeometryConstants, Rates) {
    const GeometryConstants g;
    EXPECT_NEAR(g.r(0), 0.4714, 1e-4);
    EXPECT_NEAR(g.r(1), 0.7071, 1e-4);
    EXPECT_NEAR(g.r(2), 0.9428, 1e-4);
    EXPECT_NEAR(g.lambda(0), 0.6009, 5e-4);
    EXPECT_NEAR(g.lambda(1), 0.6374, 5e-4);
    EXPECT_NEAR(g.lambda(2), 0.6640, 5e-4);
}

TEST(Quadtree, SinglePoint) {
    const Quadtree t(points_disc({{0.1, 0.2}}), TreeOptions{});
    EXPECT_EQ(t.cells().size(), 1u);
    EXPECT_TRUE(t.cell(0).is_leaf());
    const FarCounts f = t.far_counts(0);
    EXPECT_EQ(f.n[0] + f.n[1] + f.n[2], 0);
    EXPECT_EQ(f.near, 1);
}

TEST(Quadtree, FourQuadrantsForceOneSplit) {
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{0.0, 0.0};
    o.leaf_cap = 1;
    const Quadtree t(points_disc({{-1, -1}, {1, -1}, {-1, 1}, {1, 1}}), o);
    int leaves = 0;
    for (const Cell& c : t.cells())
        if (c.is_leaf()) {
            ++leaves;
            EXPECT_EQ(c.level, 1);
            EXPECT_EQ(c.count(), 1);
        }
    EXPECT_EQ(leaves, 4);
    expect_partition(t);
}

TEST(Quadtree, HalfOpenEdgeAssignment) {
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{0.0, 0.0};
    o.leaf_cap = 1;
    const Quadtree t(points_disc({{0.0, 0.5}, {-0.5, 0.5}}), o);
    const Cell& a = t.cell(t.leaf_of(0));
    const Cell& b = t.cell(t.leaf_of(1));
    EXPECT_GE(0.0, a.center.x - a.half_width);
    EXPECT_LT(0.0, a.center.x + a.half_width);
    EXPECT_NE(a.id, b.id);
}

TEST(Quadtree, CoincidentPointsStopAtMaxDepth) {
    TreeOptions o;
    o.leaf_cap = 1;
    o.max_depth = 12;
    const Quadtree t(points_disc(std::vector<Vec2>(5, Vec2{0.3, 0.3})), o);
    EXPECT_LE(t.max_level(), 12);
    const Cell& leaf = t.cell(t.leaf_of(0));
    EXPECT_EQ(leaf.count(), 5);
}

TEST(Quadtree, ConfigErrors) {
    TreeOptions o;
    o.side = 0.0;
    EXPECT_THROW(Quadtree(points_disc({{0, 0}}), o), ConfigError);
    TreeOptions o2;
    o2.side = 1.0;
    o2.center = Vec2{0.0, 0.0};
    EXPECT_THROW(Quadtree(points_disc({{0, 0}, {3, 0}}), o2), ConfigError);
    TreeOptions o3;
    o3.leaf_cap = 0;
    EXPECT_THROW(Quadtree(points_disc({{0, 0}}), o3), ConfigError);
    EXPECT_THROW(Quadtree(points_disc({}), TreeOptions{}), ConfigError);
}

TEST(Quadtree, UniformGridListSizes) {
    std::vector<Vec2> pts;
    const int m = 32;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) pts.push_back({-2.0 + (i + 0.5) * 4.0 / m, -2.0 + (j + 0.5) * 4.0 / m});
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{0.0, 0.0};
    o.leaf_cap = 4;
    const Quadtree t(points_disc(pts), o);
    EXPECT_EQ(t.max_level(), 4);
    EXPECT_EQ(t.demoted_count(), 0);
    int full = 0;
    for (int l = 2; l <= t.max_level(); ++l)
        for (int id : t.level(l)) {
            const auto& list = t.interaction_list(id);
            EXPECT_LE(list.size(), 27u);
            EXPECT_GE(list.size(), l == 2 ? 7u : 1u);
            for (const InteractionEntry& e : list) EXPECT_EQ(e.level_diff, 0);
            full += list.size() == 27u;
        }
    EXPECT_GT(full, 0);
    EXPECT_TRUE(check_separation(t).empty());
    expect_partition(t);
}

TEST(Quadtree, TwoDistantClusters) {
    std::vector<Vec2> pts;
    for (int i = 0; i < 20; ++i) {
        const double a = 0.3 * i;
        pts.push_back({-1.8 + 0.05 * std::cos(a), -1.8 + 0.05 * std::sin(a)});
        pts.push_back({1.8 + 0.05 * std::cos(a), 1.8 + 0.05 * std::sin(a)});
    }
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{0.0, 0.0};
    o.leaf_cap = 6;
    const Quadtree t(points_disc(pts), o);
    for (const Cell& c : t.cells())
        for (const InteractionEntry& e : t.interaction_list(c.id)) {
            const bool cross = (c.center.x < 0) != (t.cell(e.cell).center.x < 0);
            if (cross) {
                EXPECT_EQ(c.level, 2);
            }
        }
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const FarCounts f = t.far_counts(static_cast<int>(i));
        EXPECT_EQ(f.n[0] + f.n[1] + f.n[2] + f.near, 40);
    }
    expect_partition(t);
}

TEST(KiteTree, RepresentativeFarCounts) {
    const Quadtree& t = kite_tree();
    const FarCounts a = t.far_counts(0), b = t.far_counts(31), c = t.far_counts(93);
    EXPECT_EQ(a.n, (std::array<long, 3>{980, 0, 0}));
    EXPECT_EQ(a.max_diff, 0);
    EXPECT_EQ(b.n, (std::array<long, 3>{971, 8, 0}));
    EXPECT_EQ(b.max_diff, 1);
    EXPECT_EQ(c.n, (std::array<long, 3>{979, 0, 4}));
    EXPECT_EQ(c.max_diff, 2);
}

TEST(KiteTree, PartitionIsExact) { expect_partition(kite_tree()); }

TEST(KiteTree, SeparationAndContainment) {
    const auto bad = check_separation(kite_tree());
    for (const auto& v : bad) ADD_FAILURE() << v.what << " " << v.target_cell << " " << v.source_cell;
    EXPECT_TRUE(bad.empty());
}

TEST(KiteTree, AdjacencyMatchesBruteForce) {
    const Quadtree& t = kite_tree();
    auto closed_touch = [](const Cell& a, const Cell& b) {
        const double tol = 1e-12;
        return std::abs(a.center.x - b.center.x) <= a.half_width + b.half_width + tol &&
               std::abs(a.center.y - b.center.y) <= a.half_width + b.half_width + tol;
    };
    for (const Cell& leaf : t.cells()) {
        if (!leaf.is_leaf()) continue;
        std::set<int> brute;
        for (const Cell& o : t.cells())
            if (o.is_leaf() && closed_touch(leaf, o)) brute.insert(o.id);
        const auto got = t.adjacent_leaves(leaf.id);
        EXPECT_EQ(std::set<int>(got.begin(), got.end()), brute) << leaf.id;
        EXPECT_EQ(got.size(), brute.size());
    }
}

TEST(KiteTree, LevelsAndLists) {
    const Quadtree& t = kite_tree();
    for (const Cell& c : t.cells()) {
        if (c.level < 2) EXPECT_TRUE(t.interaction_list(c.id).empty());
        if (c.is_leaf()) EXPECT_LE(c.count(), t.leaf_cap());
        for (const InteractionEntry& e : t.interaction_list(c.id)) {
            EXPECT_GE(e.level_diff, 0);
            EXPECT_LE(e.level_diff, 2);
            EXPECT_EQ(c.level - t.cell(e.cell).level, e.level_diff);
        }
    }
    const std::vector<int> order = t.order();
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], static_cast<int>(i));
}

TEST(KiteTree, EmpiricalRadius) {
    const double r = empirical_radius(kite_tree());
    EXPECT_NEAR(r, 0.89, 0.02);
    EXPECT_LE(r, GeometryConstants{}.r(2));
}

TEST(KiteTree, StrictPolicyRejectsDeepLevelDifferences) {
    TreeOptions o = kite_options();
    o.policy = LevelDiffPolicy::error;
    EXPECT_GT(kite_tree().demoted_count(), 0);
    EXPECT_THROW(Quadtree(kite_disc(), o), StructuralError);
}

TEST(Quadtree, SeparationOnOtherTrees) {
    for (int cap : {1, 3, 10}) {
        const BoundaryDisc d = discretize(circle(1.0), 200);
        TreeOptions o;
        o.side = 2.5;
        o.leaf_cap = cap;
        const Quadtree t(d, o);
        EXPECT_TRUE(check_separation(t).empty()) << cap;
        expect_partition(t);
    }
}
