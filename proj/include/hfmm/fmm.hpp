#pragma once

/// @file
/// Fast multipole product for the discretized single-layer (S) and
/// double-layer (K) operators with kernel H_0^(1)(k|x - y|) and its normal
/// derivative in y, plus the dense reference product.
///
/// Both products return sum_{j != i} G(x_i, y_j) phi(y_j) s(y_j); the
/// quadrature factor i pi / 2N and the singular diagonal are left to callers.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hfmm/boundary.hpp"
#include "hfmm/errors.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/quadtree.hpp"
#include "hfmm/specfun.hpp"

namespace hfmm {

enum class OperatorKind { S, K };

inline std::string to_string(OperatorKind op) { return op == OperatorKind::S ? "S" : "K"; }

struct FmmConfig {
    double k = 5.0;
    int p = 20;
    OperatorKind op = OperatorKind::S;
    int workers = 1;
};

inline void validate(const FmmConfig& cfg) {
    if (!(cfg.k > 0.0) || !std::isfinite(cfg.k)) throw ConfigError("wave number k must be positive");
    if (cfg.p < 1) throw ConfigError("truncation number p must be >= 1");
    if (cfg.p > kOrderCap / 2 - 2) throw ConfigError("truncation number p too large");
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
}

/// Coefficients c_n, n in [-p, p], about a center.
struct Expansion {
    Vec2 center;
    int p = 0;
    std::vector<cplx> c;

    Expansion() = default;
    Expansion(Vec2 o, int order) : center(o), p(order), c(2 * order + 1) {}

    cplx& operator[](int n) { return c[n + p]; }
    const cplx& operator[](int n) const { return c[n + p]; }
    bool empty() const { return c.empty(); }
};

using MomentVector = Expansion;
using LocalVector = Expansion;

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(int workers, std::size_t n, Fn&& fn) {
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t nt = std::min<std::size_t>(workers, n);
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex mu;
    for (std::size_t t = 0; t < nt; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += nt) fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

enum class Radial { J, H };

/// Coefficients of one source about O: for S, B_n(k rho) e^{-i n theta} with
/// (rho, theta) the polar form of y - O; for K, the normal derivative in y,
/// (k/2) [c_{n-1} e^{-i th_nu} - c_{n+1} e^{i th_nu}].
inline Expansion source_coeffs(Radial radial, Vec2 y, Vec2 normal, Vec2 center, double k, int p,
                               OperatorKind op) {
    const Vec2 rel = y - center;
    const double rho = rel.norm();
    const int top = op == OperatorKind::K ? p + 1 : p;
    if (radial == Radial::H && rho == 0.0) throw DomainError("singular coefficient at the expansion center");
    const CylinderSeq seq(top, k * rho, radial == Radial::H);
    const double th = rel.angle();
    auto c = [&](int n) -> cplx {
        const cplx b = radial == Radial::J ? cplx(seq.j(n).value()) : seq.h(n).value();
        return b * cis(-n * th);
    };
    Expansion out(center, p);
    if (op == OperatorKind::S) {
        for (int n = -p; n <= p; ++n) out[n] = c(n);
    } else {
        const cplx em = cis(-normal.angle()), ep = cis(normal.angle());
        for (int n = -p; n <= p; ++n) out[n] = 0.5 * k * (c(n - 1) * em - c(n + 1) * ep);
    }
    return out;
}

/// M_n(O) = sum_j a_n(y_j; O) phi_j s_j over the listed knots.
inline MomentVector p2m(const std::vector<int>& idx, const BoundaryDisc& disc, Vec2 center,
                        const FmmConfig& cfg) {
    MomentVector m(center, cfg.p);
    for (int j : idx) {
        const Expansion a = source_coeffs(Radial::J, disc.knots[j], disc.normal[j], center, cfg.k, cfg.p, cfg.op);
        const cplx w = disc.phi_s(j);
        for (std::size_t i = 0; i < m.c.size(); ++i) m.c[i] += a.c[i] * w;
    }
    return m;
}

/// Adds the truncated translation of child moments to `parent`:
/// M_n(P) += sum_l M_l(c) J_{n-l}(k|O_c - O_P|) e^{-i(n-l) theta}.
inline void m2m_accumulate(const MomentVector& child, MomentVector& parent, double k) {
    if (child.p != parent.p) throw ConfigError("m2m requires equal truncation numbers");
    const int p = parent.p;
    const Vec2 d = child.center - parent.center;
    const CylinderSeq seq(2 * p, k * d.norm(), false);
    const double th = d.angle();
    std::vector<cplx> t(4 * p + 1);
    for (int q = -2 * p; q <= 2 * p; ++q) t[q + 2 * p] = seq.j(q).value() * cis(-q * th);
    for (int n = -p; n <= p; ++n) {
        cplx s{};
        for (int l = -p; l <= p; ++l) s += child[l] * t[n - l + 2 * p];
        parent[n] += s;
    }
}

inline MomentVector m2m(const std::vector<MomentVector>& children, Vec2 parent_center, double k) {
    if (children.empty()) throw ConfigError("m2m needs at least one child");
    MomentVector out(parent_center, children.front().p);
    for (const MomentVector& ch : children) m2m_accumulate(ch, out, k);
    return out;
}

/// Adds L_m += sum_n M_n H_{n-m}(k|O_L - O_I|) e^{i(n-m) theta} to `local`.
inline void m2l_accumulate(const MomentVector& src, LocalVector& local, double k) {
    if (src.p != local.p) throw ConfigError("m2l requires equal truncation numbers");
    const int p = local.p;
    const Vec2 d = local.center - src.center;
    const double r = d.norm();
    if (r == 0.0) throw DomainError("m2l between coincident centers");
    const CylinderSeq seq(2 * p, k * r, true);
    const double th = d.angle();
    std::vector<ScaledC> h(4 * p + 1);
    int emax = 0;
    for (int q = -2 * p; q <= 2 * p; ++q) {
        h[q + 2 * p] = seq.h(q) * cis(q * th);
        emax = std::max(emax, h[q + 2 * p].e);
    }
    if (emax < 1000) {
        std::vector<cplx> t(4 * p + 1);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = h[i].value();
        for (int m = -p; m <= p; ++m) {
            cplx s{};
            for (int n = -p; n <= p; ++n) s += src[n] * t[n - m + 2 * p];
            local[m] += s;
        }
        return;
    }
    for (int m = -p; m <= p; ++m) {
        cplx s{};
        for (int n = -p; n <= p; ++n) s += (h[n - m + 2 * p] * src[n]).value();
        local[m] += s;
    }
}

inline LocalVector m2l(const MomentVector& src, Vec2 target_center, double k) {
    LocalVector out(target_center, src.p);
    m2l_accumulate(src, out, k);
    return out;
}

/// L_m(C) = sum_l L_l(P) J_{l-m}(k|O_C - O_P|) e^{i(l-m) theta}.
inline LocalVector l2l(const LocalVector& parent, Vec2 child_center, double k) {
    const int p = parent.p;
    LocalVector out(child_center, p);
    const Vec2 d = child_center - parent.center;
    const CylinderSeq seq(2 * p, k * d.norm(), false);
    const double th = d.angle();
    std::vector<cplx> t(4 * p + 1);
    for (int q = -2 * p; q <= 2 * p; ++q) t[q + 2 * p] = seq.j(q).value() * cis(q * th);
    for (int m = -p; m <= p; ++m) {
        cplx s{};
        for (int l = -p; l <= p; ++l) s += parent[l] * t[l - m + 2 * p];
        out[m] = s;
    }
    return out;
}

/// sum_m L_m J_m(k|x - O|) e^{i m theta}
inline cplx l2p(const LocalVector& local, Vec2 x, double k) {
    const Vec2 d = x - local.center;
    const CylinderSeq seq(local.p, k * d.norm(), false);
    const double th = d.angle();
    cplx s{};
    for (int m = -local.p; m <= local.p; ++m) s += local[m] * seq.j(m).value() * cis(m * th);
    return s;
}

/// Kernel G(x_i, y_j): H_0(k r) for S, -k H_1(k r) (y - x).nu / r for K.
inline cplx kernel(OperatorKind op, double k, Vec2 x, Vec2 y, Vec2 normal) {
    const Vec2 d = y - x;
    const double r = d.norm();
    if (r == 0.0) throw DomainError("kernel evaluated at coincident points");
    const Hankel01 h = hankel01(k * r);
    if (op == OperatorKind::S) return h.h0;
    return -k * h.h1 * (d.dot(normal) / r);
}

/// Direct sum over the near field of the target's leaf, diagonal excluded.
inline cplx near_field(int i, const BoundaryDisc& disc, const Quadtree& tree, const FmmConfig& cfg) {
    cplx s{};
    for (int j : tree.near_points(tree.leaf_of(i))) {
        if (j == i) continue;
        s += kernel(cfg.op, cfg.k, disc.knots[i], disc.knots[j], disc.normal[j]) * disc.phi_s(j);
    }
    return s;
}

/// Dense O(N^2) product with the diagonal excluded.
inline std::vector<cplx> direct_apply(const BoundaryDisc& disc, const FmmConfig& cfg) {
    validate(cfg);
    const std::size_t n = disc.size();
    std::vector<cplx> out(n);
    parallel_for(cfg.workers, n, [&](std::size_t i) {
        cplx s{};
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            s += kernel(cfg.op, cfg.k, disc.knots[i], disc.knots[j], disc.normal[j]) * disc.phi_s(j);
        }
        out[i] = s;
    });
    return out;
}

/// One FMM evaluation that keeps every intermediate expansion.
class Fmm {
public:
    Fmm(const BoundaryDisc& disc, const Quadtree& tree, FmmConfig cfg) : disc_(disc), tree_(tree), cfg_(cfg) {
        validate(cfg_);
        if (tree.point_count() != disc.size()) throw ConfigError("tree and discretization disagree");
        const std::size_t nc = tree.cells().size();
        moments_.resize(nc);
        m2l_part_.resize(nc);
        locals_.resize(nc);
        upward();
        downward();
    }

    const FmmConfig& config() const { return cfg_; }
    const Quadtree& tree() const { return tree_; }
    const BoundaryDisc& disc() const { return disc_; }

    /// Cells at level >= 2 and every leaf carry moments.
    bool has_moments(int cell) const { return !moments_.at(cell).empty(); }
    const MomentVector& moments(int cell) const { return moments_.at(cell); }
    /// Local moments accumulated from the cell's own interaction list only.
    const LocalVector& m2l_locals(int cell) const { return m2l_part_.at(cell); }
    /// Full local moments (translated parent locals plus own M2L part).
    bool has_locals(int cell) const { return !locals_.at(cell).empty(); }
    const LocalVector& locals(int cell) const { return locals_.at(cell); }

    /// Far-field value at a knot: L2P of its leaf's locals (0 above level 2).
    cplx far_value(int i) const {
        const int leaf = tree_.leaf_of(i);
        if (!has_locals(leaf)) return {};
        return l2p(locals_[leaf], disc_.knots[i], cfg_.k);
    }
    cplx near_value(int i) const { return near_field(i, disc_, tree_, cfg_); }

    std::vector<cplx> result() const {
        std::vector<cplx> out(disc_.size());
        parallel_for(cfg_.workers, out.size(), [&](std::size_t i) {
            out[i] = near_value(static_cast<int>(i)) + far_value(static_cast<int>(i));
        });
        return out;
    }

private:
    void upward() {
        for (int l = tree_.max_level(); l >= 0; --l) {
            const std::vector<int>& ids = tree_.level(l);
            parallel_for(cfg_.workers, ids.size(), [&](std::size_t t) {
                const Cell& c = tree_.cell(ids[t]);
                if (c.is_leaf()) {
                    moments_[c.id] = p2m(tree_.points_of(c.id), disc_, c.center, cfg_);
                } else if (l >= 2) {
                    MomentVector m(c.center, cfg_.p);
                    for (int ch : c.children) m2m_accumulate(moments_[ch], m, cfg_.k);
                    moments_[c.id] = std::move(m);
                }
            });
        }
    }

    void downward() {
        for (int l = 2; l <= tree_.max_level(); ++l) {
            const std::vector<int>& ids = tree_.level(l);
            parallel_for(cfg_.workers, ids.size(), [&](std::size_t t) {
                const Cell& c = tree_.cell(ids[t]);
                LocalVector lm(c.center, cfg_.p);
                for (const InteractionEntry& e : tree_.interaction_list(c.id))
                    m2l_accumulate(moments_[e.cell], lm, cfg_.k);
                LocalVector total = l >= 3 ? l2l(locals_[c.parent], c.center, cfg_.k) : LocalVector(c.center, cfg_.p);
                for (std::size_t i = 0; i < total.c.size(); ++i) total.c[i] += lm.c[i];
                m2l_part_[c.id] = std::move(lm);
                locals_[c.id] = std::move(total);
            });
        }
    }

    const BoundaryDisc& disc_;
    const Quadtree& tree_;
    FmmConfig cfg_;
    std::vector<MomentVector> moments_;
    std::vector<LocalVector> m2l_part_;
    std::vector<LocalVector> locals_;
};

/// FMM product for a prebuilt tree.
inline std::vector<cplx> apply(const BoundaryDisc& disc, const Quadtree& tree, const FmmConfig& cfg) {
    return Fmm(disc, tree, cfg).result();
}

}  // namespace hfmm
