#include <gtest/gtest.h>

#include <boost/math/special_functions/bessel.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "hfmm/fmm.hpp"

using namespace hfmm;

namespace {

cplx boost_h(int n, double z) { return {boost::math::cyl_bessel_j(n, z), boost::math::cyl_neumann(n, z)}; }

// Independent kernel: S is H_0(k|x - y|), K its normal derivative in y.
cplx naive_kernel(OperatorKind op, double k, Vec2 x, Vec2 y, Vec2 nu) {
    const double r = (y - x).norm();
    if (op == OperatorKind::S) return boost_h(0, k * r);
    return -k * boost_h(1, k * r) * ((y - x).dot(nu) / r);
}

std::vector<cplx> naive_apply(const BoundaryDisc& d, OperatorKind op, double k) {
    std::vector<cplx> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = 0; j < d.size(); ++j)
            if (i != j) out[i] += naive_kernel(op, k, d.knots[i], d.knots[j], d.normal[j]) * d.phi_s(j);
    return out;
}

BoundaryDisc cluster(Vec2 c, double radius, int n, std::uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    BoundaryDisc d;
    d.n_half = n;
    for (int i = 0; i < n; ++i) {
        Vec2 o{u(rng), u(rng)};
        d.knots.push_back(c + o * (radius / std::numbers::sqrt2));
        const double a = std::numbers::pi * u(rng);
        d.normal.push_back({std::cos(a), std::sin(a)});
        d.weight.push_back(0.5 + 0.25 * (u(rng) + 1.0));
        d.density.push_back({u(rng), u(rng)});
        d.t.push_back(0.0);
    }
    return d;
}

std::vector<int> all(const BoundaryDisc& d) {
    std::vector<int> v(d.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(i);
    return v;
}

cplx direct_at(const BoundaryDisc& d, Vec2 x, double k, OperatorKind op) {
    cplx s{};
    for (std::size_t j = 0; j < d.size(); ++j) s += naive_kernel(op, k, x, d.knots[j], d.normal[j]) * d.phi_s(j);
    return s;
}

cplx multipole_eval(const MomentVector& m, Vec2 x, double k) {
    const Vec2 d = x - m.center;
    cplx s{};
    for (int n = -m.p; n <= m.p; ++n) s += m[n] * hankel1(n, k * d.norm()) * cis(n * d.angle());
    return s;
}

double rel_inf(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double e = 0.0, s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        e = std::max(e, std::abs(a[i] - b[i]));
        s = std::max(s, std::abs(b[i]));
    }
    return e / s;
}

TreeOptions kite_options() {
    TreeOptions o;
    o.side = 4.0;
    o.center = Vec2{-0.5, 0.0};
    o.leaf_cap = 6;
    return o;
}

}  // namespace

TEST(P2M, EmptyAndCentered) {
    const BoundaryDisc d = cluster({0.0, 0.0}, 0.2, 3, 1);
    const FmmConfig cfg{2.0, 8, OperatorKind::S, 1};
    const MomentVector z = p2m({}, d, {0.0, 0.0}, cfg);
    for (const cplx& c : z.c) EXPECT_EQ(c, cplx{});
    const MomentVector one = p2m({1}, d, d.knots[1], cfg);
    EXPECT_EQ(one[0], d.phi_s(1));
    for (int n = 1; n <= 8; ++n) {
        EXPECT_EQ(one[n], cplx{});
        EXPECT_EQ(one[-n], cplx{});
    }
}

TEST(P2M, FarFieldReconstruction) {
    for (OperatorKind op : {OperatorKind::S, OperatorKind::K}) {
        const BoundaryDisc d = cluster({0.3, -0.2}, 0.3, 12, 7);
        const FmmConfig cfg{5.0, 60, op, 1};
        const MomentVector m = p2m(all(d), d, {0.3, -0.2}, cfg);
        for (Vec2 x : {Vec2{2.5, 1.0}, Vec2{-1.5, -2.0}, Vec2{0.3, 1.6}}) {
            const cplx ref = direct_at(d, x, 5.0, op);
            EXPECT_LT(std::abs(multipole_eval(m, x, 5.0) - ref), 1e-10 * std::abs(ref)) << to_string(op);
        }
    }
}

TEST(M2M, ZeroShiftIsIdentity) {
    const BoundaryDisc d = cluster({0.0, 0.0}, 0.2, 5, 3);
    const FmmConfig cfg{3.0, 10, OperatorKind::S, 1};
    const MomentVector m = p2m(all(d), d, {0.05, 0.0}, cfg);
    const MomentVector t = m2m({m}, {0.05, 0.0}, 3.0);
    for (int n = -10; n <= 10; ++n) EXPECT_NEAR(std::abs(t[n] - m[n]), 0.0, 1e-15 * (1 + std::abs(m[n])));
}

TEST(M2M, ApproachesDirectMomentsAsPGrows) {
    const BoundaryDisc d = cluster({0.1, 0.1}, 0.05, 1, 9);
    double prev = INFINITY;
    for (int p : {4, 8, 12, 16}) {
        const FmmConfig cfg{5.0, p, OperatorKind::S, 1};
        const MomentVector child = p2m({0}, d, {0.125, 0.125}, cfg);
        const MomentVector parent = m2m({child}, {0.0, 0.0}, 5.0);
        const MomentVector direct = p2m({0}, d, {0.0, 0.0}, cfg);
        double defect = 0.0;
        for (int n = -p; n <= p; ++n) defect = std::max(defect, std::abs(parent[n] - direct[n]));
        EXPECT_LT(defect, prev + 1e-15);
        prev = defect;
    }
    EXPECT_LT(prev, 1e-12);
}

TEST(M2L, ZeroAndUnitMoments) {
    MomentVector m({0.0, 0.0}, 6);
    const Vec2 target{2.0, -1.0};
    const LocalVector z = m2l(m, target, 4.0);
    for (const cplx& c : z.c) EXPECT_EQ(c, cplx{});
    m[0] = 1.0;
    const LocalVector l = m2l(m, target, 4.0);
    const Vec2 delta = target - m.center;
    for (int q = -6; q <= 6; ++q) {
        const cplx ref = hankel1(-q, 4.0 * delta.norm()) * cis(-q * delta.angle());
        EXPECT_NEAR(std::abs(l[q] - ref), 0.0, 1e-13 * std::abs(ref));
    }
    EXPECT_THROW(m2l(m, m.center, 4.0), DomainError);
}

TEST(M2L, FarFieldThroughLocals) {
    const BoundaryDisc d = cluster({-1.0, 0.0}, 0.25, 10, 11);
    const FmmConfig cfg{5.0, 60, OperatorKind::S, 1};
    const MomentVector m = p2m(all(d), d, {-1.0, 0.0}, cfg);
    const LocalVector l = m2l(m, {1.0, 0.2}, 5.0);
    for (Vec2 x : {Vec2{1.1, 0.3}, Vec2{0.8, 0.0}, Vec2{1.0, 0.45}}) {
        const cplx ref = direct_at(d, x, 5.0, OperatorKind::S);
        EXPECT_LT(std::abs(l2p(l, x, 5.0) - ref), 1e-10 * std::abs(ref));
    }
}

TEST(L2L, IdentityZeroAndConvergence) {
    LocalVector l({0.0, 0.0}, 12);
    const LocalVector z = l2l(l, {0.1, 0.1}, 3.0);
    for (const cplx& c : z.c) EXPECT_EQ(c, cplx{});
    std::mt19937 rng(5);
    std::normal_distribution<double> g;
    for (cplx& c : l.c) c = {g(rng), g(rng)};
    const LocalVector same = l2l(l, {0.0, 0.0}, 3.0);
    for (int m = -12; m <= 12; ++m) EXPECT_NEAR(std::abs(same[m] - l[m]), 0.0, 1e-14);

    // Locals of a genuine far field, shifted to a child center.
    const BoundaryDisc d = cluster({-2.0, 0.5}, 0.2, 6, 2);
    const Vec2 x{0.12, -0.08};
    const cplx ref = direct_at(d, x, 4.0, OperatorKind::S);
    double prev = INFINITY;
    for (int p : {10, 20, 30, 40}) {
        const FmmConfig cfg{4.0, p, OperatorKind::S, 1};
        const LocalVector parent = m2l(p2m(all(d), d, {-2.0, 0.5}, cfg), {0.0, 0.0}, 4.0);
        const LocalVector child = l2l(parent, {0.1, -0.1}, 4.0);
        const double e = std::abs(l2p(child, x, 4.0) - ref);
        EXPECT_LT(e, prev * 1.01 + 1e-14);
        prev = e;
    }
    EXPECT_LT(prev, 1e-10 * std::abs(ref));
}

TEST(L2P, Basics) {
    LocalVector l({0.5, 0.5}, 4);
    EXPECT_EQ(l2p(l, {1.0, 1.0}, 2.0), cplx{});
    l[0] = 1.0;
    EXPECT_NEAR(std::abs(l2p(l, {1.0, 1.3}, 2.0) - bessel_j(0, 2.0 * Vec2{0.5, 0.8}.norm())), 0.0, 1e-15);
}

TEST(Translations, ChainMatchesDirectSum) {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 6; ++trial) {
        const Vec2 oc{u(rng), u(rng)};
        const Vec2 op = oc + Vec2{0.15, -0.15};
        const double ang = std::numbers::pi * u(rng);
        const Vec2 ol = op + Vec2{std::cos(ang), std::sin(ang)} * 2.5;
        const Vec2 oleaf = ol + Vec2{-0.15, 0.15};
        const BoundaryDisc d = cluster(oc, 0.12, 8, 100 + trial);
        for (OperatorKind kind : {OperatorKind::S, OperatorKind::K}) {
            const FmmConfig cfg{5.0, 60, kind, 1};
            const MomentVector mc = p2m(all(d), d, oc, cfg);
            const MomentVector mp = m2m({mc}, op, 5.0);
            const LocalVector lp = m2l(mp, ol, 5.0);
            const LocalVector ll = l2l(lp, oleaf, 5.0);
            const Vec2 x = oleaf + Vec2{0.05 * u(rng), 0.05 * u(rng)};
            const cplx ref = direct_at(d, x, 5.0, kind);
            EXPECT_LT(std::abs(l2p(ll, x, 5.0) - ref), 1e-9 * std::abs(ref)) << trial << to_string(kind);
        }
    }
}

TEST(P2M, ReflectionSymmetry) {
    BoundaryDisc d;
    d.n_half = 3;
    for (Vec2 y : {Vec2{0.1, 0.07}, Vec2{-0.05, 0.12}, Vec2{0.02, 0.03}}) {
        for (Vec2 img : {y, Vec2{y.x, -y.y}}) {
            d.knots.push_back(img);
            d.normal.push_back({1.0, 0.0});
            d.weight.push_back(1.3);
            d.density.push_back(0.7);
            d.t.push_back(0.0);
        }
    }
    const FmmConfig cfg{5.0, 12, OperatorKind::S, 1};
    const MomentVector mx = p2m(all(d), d, {0.0, 0.0}, cfg);
    for (int n = -12; n <= 12; ++n) EXPECT_NEAR(mx[n].imag(), 0.0, 1e-15);

    BoundaryDisc e = d;
    for (Vec2& y : e.knots) y = {-y.x, y.y};
    const MomentVector my = p2m(all(e), e, {0.0, 0.0}, cfg);
    for (int n = -12; n <= 12; ++n) {
        const cplx ref = (n % 2 ? -1.0 : 1.0) * std::conj(mx[n]);
        EXPECT_NEAR(std::abs(my[n] - ref), 0.0, 1e-15);
    }
}

TEST(Direct, SmallCasesAndNaiveOracle) {
    BoundaryDisc one = cluster({0.0, 0.0}, 0.1, 1, 4);
    for (const cplx& v : direct_apply(one, {3.0, 1, OperatorKind::S, 1})) EXPECT_EQ(v, cplx{});

    BoundaryDisc two = cluster({0.0, 0.0}, 0.5, 2, 4);
    two.density = {1.0, 1.0};
    two.weight = {1.0, 1.0};
    const auto v = direct_apply(two, {3.0, 1, OperatorKind::S, 1});
    EXPECT_EQ(v[0], v[1]);
    EXPECT_NEAR(std::abs(v[0] - boost_h(0, 3.0 * (two.knots[0] - two.knots[1]).norm())), 0.0, 1e-14);

    const BoundaryDisc k = discretize(kite(), 60);
    for (OperatorKind op : {OperatorKind::S, OperatorKind::K}) {
        const auto a = direct_apply(k, {5.0, 1, op, 1});
        EXPECT_LT(rel_inf(a, naive_apply(k, op, 5.0)), 1e-13) << to_string(op);
    }
}

TEST(NearField, MatchesRestrictedSum) {
    const BoundaryDisc d = discretize(kite(), 200);
    const Quadtree t(d, kite_options());
    const FmmConfig cfg{5.0, 10, OperatorKind::K, 1};
    for (std::size_t i = 0; i < d.size(); i += 7) {
        cplx ref{};
        for (int j : t.near_points(t.leaf_of(static_cast<int>(i))))
            if (j != static_cast<int>(i)) ref += naive_kernel(OperatorKind::K, 5.0, d.knots[i], d.knots[j], d.normal[j]) * d.phi_s(j);
        EXPECT_NEAR(std::abs(near_field(static_cast<int>(i), d, t, cfg) - ref), 0.0, 1e-12 * (1.0 + std::abs(ref)));
    }
    BoundaryDisc lone = cluster({0.0, 0.0}, 0.1, 1, 1);
    const Quadtree tl(lone, TreeOptions{});
    EXPECT_EQ(near_field(0, lone, tl, cfg), cplx{});
}

TEST(Apply, CircleSmallWaveNumberAndDoubleLayer) {
    const BoundaryDisc d = discretize(circle(1.0), 256);
    TreeOptions o;
    o.side = 2.5;
    const Quadtree t(d, o);
    const std::pair<double, OperatorKind> cases[] = {{0.1, OperatorKind::S}, {5.0, OperatorKind::S}, {0.1, OperatorKind::K}, {5.0, OperatorKind::K}};
    for (const auto& [k, op] : cases) {
        const FmmConfig cfg{k, 40, op, 1};
        const double e = rel_inf(apply(d, t, cfg), direct_apply(d, cfg));
        EXPECT_LT(e, op == OperatorKind::S ? 1e-5 : 1e-3) << k << to_string(op);
    }
}

TEST(Apply, CircleRotationalImages) {
    const int n = 128;
    const BoundaryDisc d = discretize(circle(1.0), n);
    TreeOptions o;
    o.side = 2.5;
    o.center = Vec2{0.0, 0.0};
    const Quadtree t(d, o);
    const FmmConfig cfg{5.0, 40, OperatorKind::S, 1};
    const std::vector<cplx> direct = direct_apply(d, cfg);
    for (int i = 1; i < 2 * n; ++i) EXPECT_NEAR(std::abs(direct[i] - direct[0]), 0.0, 1e-10 * std::abs(direct[0]));
    const std::vector<cplx> fast = apply(d, t, cfg);
    // A quarter turn maps knot j to knot j + N/2 and the tree onto itself.
    for (int i = 0; i < 2 * n; ++i) {
        if (i % (n / 2) == 0) continue;  // knots on the axes fall on cell edges
        const int j = (i + n / 2) % (2 * n);
        EXPECT_NEAR(std::abs(fast[i] - fast[j]), 0.0, 1e-10 * std::abs(direct[0])) << i;
    }
}

TEST(Apply, KiteConvergesInP) {
    const BoundaryDisc d = discretize(kite(), 500);
    const Quadtree t(d, kite_options());
    const FmmConfig base{5.0, 1, OperatorKind::S, 1};
    const std::vector<cplx> direct = direct_apply(d, base);
    double prev = INFINITY;
    for (int p = 5; p <= 40; p += 5) {
        const double e = rel_inf(apply(d, t, {5.0, p, OperatorKind::S, 1}), direct);
        EXPECT_LE(e, prev * 1.01) << p;
        prev = e;
    }
    EXPECT_LT(prev, 1e-6);
}

TEST(Apply, DeterministicAndWorkerIndependent) {
    const BoundaryDisc d = discretize(kite(), 300);
    const Quadtree t(d, kite_options());
    const FmmConfig one{5.0, 20, OperatorKind::K, 1};
    const auto a = apply(d, t, one), b = apply(d, t, one);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    const auto c = apply(d, t, {5.0, 20, OperatorKind::K, 4});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - c[i]), 1e-13 * std::abs(a[i]) + 1e-13);
}

TEST(Fmm, ExpansionLevels) {
    const BoundaryDisc d = discretize(kite(), 200);
    const Quadtree t(d, kite_options());
    const Fmm f(d, t, {5.0, 8, OperatorKind::S, 1});
    for (const Cell& c : t.cells()) {
        if (c.level >= 2 || c.is_leaf()) EXPECT_TRUE(f.has_moments(c.id));
        if (c.level < 2 && !c.is_leaf()) EXPECT_FALSE(f.has_moments(c.id));
        EXPECT_EQ(f.has_locals(c.id), c.level >= 2);
    }
}

TEST(Fmm, ConfigValidation) {
    EXPECT_THROW(validate(FmmConfig{0.0, 5, OperatorKind::S, 1}), ConfigError);
    EXPECT_THROW(validate(FmmConfig{1.0, 0, OperatorKind::S, 1}), ConfigError);
    EXPECT_THROW(validate(FmmConfig{1.0, 5, OperatorKind::S, 0}), ConfigError);
    EXPECT_THROW(validate(FmmConfig{1.0, kOrderCap, OperatorKind::S, 1}), ConfigError);
}
