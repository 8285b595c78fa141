#pragma once

/// @file
/// Adaptive quadtree over a square root cell, with per-cell neighbor sets,
/// well-separated interaction lists and the geometry constants that bound
/// every interaction pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "hfmm/boundary.hpp"
#include "hfmm/errors.hpp"
#include "hfmm/geometry.hpp"

namespace hfmm {

/// What to do with a coarse leaf that first becomes non-adjacent more than two
/// levels below its own level.
enum class LevelDiffPolicy {
    demote_to_near,  ///< keep it in the direct near field of the finer cells
    error,           ///< refuse the tree with StructuralError
};

struct TreeOptions {
    double side = 4.0;
    std::optional<Vec2> center;  ///< defaults to the knot bounding-box center
    int leaf_cap = 6;
    int max_depth = 30;
    LevelDiffPolicy policy = LevelDiffPolicy::demote_to_near;
};

struct Cell {
    int id = 0;
    int level = 0;
    std::int64_t ix = 0, iy = 0;  ///< integer position on the level grid
    Vec2 center;
    double half_width = 0.0;
    int parent = -1;
    std::vector<int> children;
    int begin = 0, end = 0;  ///< range into Quadtree::order

    bool is_leaf() const { return children.empty(); }
    int count() const { return end - begin; }
};

struct InteractionEntry {
    int cell = 0;
    int level_diff = 0;  ///< L - L_DI
};

/// Far-field point counts of one source point, bucketed by level difference.
struct FarCounts {
    std::array<long, 3> n{};
    int max_diff = 0;  ///< I = max{i : N_i != 0}
    long near = 0;
};

/// d_L = sqrt(2) d / 2^{L+2}
inline double level_distance(double d, int level) {
    if (level < 0) throw DomainError("level must be non-negative");
    return std::numbers::sqrt2 * d / std::ldexp(1.0, level + 2);
}

/// Separation constants indexed by level difference i = 0, 1, 2.
struct GeometryConstants {
    std::array<double, 3> eps{3.0, 4.0, 6.0};
    std::array<double, 3> zeta{4.0, std::sqrt(26.0), std::sqrt(50.0)};
    std::array<double, 3> eta{2.0, 4.0, 8.0};

    double r(int i) const { return eta[i] / (std::numbers::sqrt2 * eps[i]); }
    double gamma(int i) const { return std::numbers::sqrt2 / zeta[i]; }
    double lambda(int i) const {
        return gamma(i) * std::exp(3.0 * eta[i] / (2.0 * std::numbers::sqrt2 * zeta[i]));
    }
};

class Quadtree {
public:
    Quadtree(const BoundaryDisc& disc, const TreeOptions& opt) : opt_(opt), points_(disc.knots) {
        if (!(opt.side > 0.0) || !std::isfinite(opt.side)) throw ConfigError("root side must be positive");
        if (opt.leaf_cap < 1) throw ConfigError("leaf_cap must be positive");
        if (opt.max_depth < 1 || opt.max_depth > 60) throw ConfigError("max_depth must be in [1, 60]");
        if (points_.empty()) throw ConfigError("cannot build a tree over zero points");

        Vec2 c;
        if (opt.center) {
            c = *opt.center;
        } else {
            Vec2 lo = points_[0], hi = points_[0];
            for (const Vec2& p : points_) {
                lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
                hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
            }
            c = (lo + hi) * 0.5;
        }
        origin_ = c - Vec2{opt.side / 2.0, opt.side / 2.0};
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const Vec2 p = points_[i];
            if (!(p.x >= origin_.x && p.x <= origin_.x + opt.side && p.y >= origin_.y &&
                  p.y <= origin_.y + opt.side))
                throw ConfigError("knot " + std::to_string(i + 1) + " lies outside the root square");
        }

        order_.resize(points_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        cells_.push_back(make_cell(0, 0, 0, -1, 0, static_cast<int>(order_.size())));
        split(0);

        leaf_of_.assign(points_.size(), -1);
        for (const Cell& cell : cells_) {
            if (!cell.is_leaf()) continue;
            for (int k = cell.begin; k < cell.end; ++k) leaf_of_[order_[k]] = cell.id;
        }
        for (const Cell& cell : cells_) {
            if (static_cast<int>(by_level_.size()) <= cell.level) by_level_.resize(cell.level + 1);
            by_level_[cell.level].push_back(cell.id);
        }
        build_lists();
    }

    const TreeOptions& options() const { return opt_; }
    Vec2 origin() const { return origin_; }
    double side() const { return opt_.side; }
    int max_level() const { return static_cast<int>(by_level_.size()) - 1; }
    int leaf_cap() const { return opt_.leaf_cap; }

    const std::vector<Cell>& cells() const { return cells_; }
    const Cell& cell(int id) const { return cells_.at(id); }
    const std::vector<int>& level(int l) const { return by_level_.at(l); }
    std::size_t point_count() const { return points_.size(); }
    const Vec2& point(int idx) const { return points_[idx]; }

    /// Knot indices under a cell.
    std::vector<int> points_of(int id) const {
        const Cell& c = cells_.at(id);
        return {order_.begin() + c.begin, order_.begin() + c.end};
    }
    const std::vector<int>& order() const { return order_; }
    int leaf_of(int point_index) const { return leaf_of_.at(point_index); }

    /// Cells whose points are summed directly for targets in a leaf, or the
    /// cells a finer cell inherits as candidates: same-level adjacent cells,
    /// coarser adjacent leaves and demoted coarse leaves.
    const std::vector<int>& neighbors(int id) const { return neighbors_.at(id); }
    const std::vector<InteractionEntry>& interaction_list(int id) const { return lists_.at(id); }

    /// Leaf, parent, ..., root.
    std::vector<int> chain(int leaf) const {
        std::vector<int> out;
        for (int c = leaf; c != -1; c = cells_[c].parent) out.push_back(c);
        return out;
    }

    /// Knot indices summed directly for targets in this leaf.
    std::vector<int> near_points(int leaf) const {
        std::vector<int> out;
        for (int q : neighbors_.at(leaf)) {
            const Cell& c = cells_[q];
            out.insert(out.end(), order_.begin() + c.begin, order_.begin() + c.end);
        }
        return out;
    }

    /// Every leaf whose closed square touches the given leaf (itself included).
    std::vector<int> adjacent_leaves(int leaf) const {
        std::vector<int> out;
        collect_touching(0, cells_.at(leaf), out);
        return out;
    }

    /// Closed squares of a and b share at least a corner.
    bool touching(const Cell& a, const Cell& b) const {
        const int L = std::max(a.level, b.level);
        const std::int64_t sa = std::int64_t{1} << (L - a.level);
        const std::int64_t sb = std::int64_t{1} << (L - b.level);
        const std::int64_t ax0 = a.ix * sa, ax1 = (a.ix + 1) * sa, ay0 = a.iy * sa, ay1 = (a.iy + 1) * sa;
        const std::int64_t bx0 = b.ix * sb, bx1 = (b.ix + 1) * sb, by0 = b.iy * sb, by1 = (b.iy + 1) * sb;
        return ax0 <= bx1 && bx0 <= ax1 && ay0 <= by1 && by0 <= ay1;
    }

    FarCounts far_counts(int point_index) const {
        FarCounts fc;
        const int leaf = leaf_of(point_index);
        for (int c : chain(leaf))
            for (const InteractionEntry& e : lists_[c]) fc.n[e.level_diff] += cells_[e.cell].count();
        for (int i = 2; i >= 0; --i)
            if (fc.n[i] != 0) {
                fc.max_diff = i;
                break;
            }
        for (int q : neighbors_[leaf]) fc.near += cells_[q].count();
        return fc;
    }

    /// Number of demoted coarse leaves (entries that would need level difference > 2).
    int demoted_count() const { return demoted_; }

private:
    Cell make_cell(int level, std::int64_t ix, std::int64_t iy, int parent, int begin, int end) const {
        Cell c;
        c.id = static_cast<int>(cells_.size());
        c.level = level;
        c.ix = ix;
        c.iy = iy;
        const double s = opt_.side / std::ldexp(1.0, level);
        c.half_width = s / 2.0;
        c.center = origin_ + Vec2{(ix + 0.5) * s, (iy + 0.5) * s};
        c.parent = parent;
        c.begin = begin;
        c.end = end;
        return c;
    }

    void split(int id) {
        const Cell c = cells_[id];
        if (c.count() <= opt_.leaf_cap || c.level >= opt_.max_depth) return;
        const Vec2 mid = c.center;
        std::array<std::vector<int>, 4> part;
        for (int k = c.begin; k < c.end; ++k) {
            const int idx = order_[k];
            const int qx = points_[idx].x >= mid.x ? 1 : 0;
            const int qy = points_[idx].y >= mid.y ? 1 : 0;
            part[qy * 2 + qx].push_back(idx);
        }
        int pos = c.begin;
        std::vector<int> kids;
        for (int q = 0; q < 4; ++q) {
            if (part[q].empty()) continue;
            const int b = pos;
            for (int idx : part[q]) order_[pos++] = idx;
            cells_.push_back(make_cell(c.level + 1, 2 * c.ix + (q & 1), 2 * c.iy + (q >> 1), id, b, pos));
            kids.push_back(cells_.back().id);
        }
        cells_[id].children = kids;
        for (int k : kids) split(k);
    }

    void build_lists() {
        neighbors_.assign(cells_.size(), {});
        lists_.assign(cells_.size(), {});
        neighbors_[0] = {0};
        for (std::size_t l = 0; l + 1 < by_level_.size(); ++l) {
            for (int pid : by_level_[l]) {
                for (int cid : cells_[pid].children) {
                    const Cell& C = cells_[cid];
                    for (int q : neighbors_[pid]) {
                        const Cell& Q = cells_[q];
                        auto consider = [&](int r) {
                            const Cell& R = cells_[r];
                            const int diff = C.level - R.level;
                            if (touching(C, R)) {
                                neighbors_[cid].push_back(r);
                            } else if (diff <= 2) {
                                lists_[cid].push_back({r, diff});
                            } else if (opt_.policy == LevelDiffPolicy::demote_to_near) {
                                neighbors_[cid].push_back(r);
                                ++demoted_;
                            } else {
                                throw StructuralError(
                                    "interaction with level difference " + std::to_string(diff) +
                                    " needed; use a smaller leaf_cap");
                            }
                        };
                        if (Q.is_leaf()) {
                            consider(q);
                        } else {
                            for (int r : Q.children) consider(r);
                        }
                    }
                }
            }
        }
    }

    void collect_touching(int id, const Cell& target, std::vector<int>& out) const {
        const Cell& c = cells_[id];
        if (!touching(c, target)) return;
        if (c.is_leaf()) {
            out.push_back(id);
            return;
        }
        for (int k : c.children) collect_touching(k, target, out);
    }

    TreeOptions opt_;
    std::vector<Vec2> points_;
    Vec2 origin_;
    std::vector<Cell> cells_;
    std::vector<int> order_;
    std::vector<int> leaf_of_;
    std::vector<std::vector<int>> by_level_;
    std::vector<std::vector<int>> neighbors_;
    std::vector<std::vector<InteractionEntry>> lists_;
    int demoted_ = 0;
};

/// One failed geometric check.
struct SeparationViolation {
    std::string what;
    int target_cell = 0;
    int source_cell = 0;
    double value = 0.0;
    double limit = 0.0;
};

/// Checks every interaction pair against the Table-style separation constants
/// and every cell against its containment radii. Returns all violations.
inline std::vector<SeparationViolation> check_separation(const Quadtree& tree,
                                                         const GeometryConstants& g = {}) {
    std::vector<SeparationViolation> bad;
    constexpr double slack = 1e-12;
    const double d = tree.side();
    for (const Cell& C : tree.cells()) {
        if (C.level < 1) continue;
        const double dl = level_distance(d, C.level);
        const Cell& P = tree.cell(C.parent);
        const double dp = (C.center - P.center).norm();
        if (std::abs(dp - 2.0 * dl) > slack * d) bad.push_back({"parent offset", C.id, P.id, dp, 2.0 * dl});
        for (int x : tree.points_of(C.id)) {
            const double rx = (tree.point(x) - C.center).norm();
            if (rx > 2.0 * dl * (1 + slack)) bad.push_back({"containment", C.id, C.id, rx, 2.0 * dl});
        }
        for (const InteractionEntry& e : tree.interaction_list(C.id)) {
            const Cell& I = tree.cell(e.cell);
            const int i = e.level_diff;
            const double oo = (C.center - I.center).norm();
            if (oo < std::numbers::sqrt2 * g.zeta[i] * dl * (1 - slack))
                bad.push_back({"center distance", C.id, I.id, oo, std::numbers::sqrt2 * g.zeta[i] * dl});
            for (int x : tree.points_of(C.id)) {
                const double v = (tree.point(x) - I.center).norm();
                if (v < std::numbers::sqrt2 * g.eps[i] * dl * (1 - slack))
                    bad.push_back({"target distance", C.id, I.id, v, std::numbers::sqrt2 * g.eps[i] * dl});
            }
            for (int y : tree.points_of(I.id)) {
                const double v = (tree.point(y) - I.center).norm();
                if (v > g.eta[i] * dl * (1 + slack)) bad.push_back({"source radius", C.id, I.id, v, g.eta[i] * dl});
                const double w = (tree.point(y) - C.center).norm();
                if (w < 3.0 * std::numbers::sqrt2 * dl * (1 - slack))
                    bad.push_back({"source distance", C.id, I.id, w, 3.0 * std::numbers::sqrt2 * dl});
            }
        }
    }
    return bad;
}

/// Largest |y - O_DI| / |x - O_DI| over all interaction pairs and member points.
inline double empirical_radius(const Quadtree& tree) {
    double worst = 0.0;
    for (const Cell& C : tree.cells()) {
        const auto& list = tree.interaction_list(C.id);
        if (list.empty()) continue;
        const std::vector<int> xs = tree.points_of(C.id);
        for (const InteractionEntry& e : list) {
            const Cell& I = tree.cell(e.cell);
            double ymax = 0.0;
            for (int y : tree.points_of(I.id)) ymax = std::max(ymax, (tree.point(y) - I.center).norm());
            double xmin = std::numeric_limits<double>::infinity();
            for (int x : xs) xmin = std::min(xmin, (tree.point(x) - I.center).norm());
            worst = std::max(worst, ymax / xmin);
        }
    }
    return worst;
}

}  // namespace hfmm
