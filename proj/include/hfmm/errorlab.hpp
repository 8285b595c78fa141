#pragma once

/// @file
/// Exact error analysis of the FMM far field: ground-truth moments and local
/// moments, their errors computed by direct difference and by recursion, the
/// five-part decomposition of the far-field error at a source point, and the
/// analytic bounds for each part.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfmm/boundary.hpp"
#include "hfmm/errors.hpp"
#include "hfmm/fmm.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/quadtree.hpp"
#include "hfmm/specfun.hpp"

namespace hfmm {

struct LabOptions {
    int p_max = 40;           ///< largest truncation number that may be analyzed
    int tail_terms = 1000;    ///< n_max for the slowly decaying remainders
    int extra_terms = 60;     ///< fixed length of the super-geometric remainders
    double stop_rel = 1e-18;  ///< early stop of long remainders, relative to the partial sum
    double moment_rel = 1e-12;
    double local_rel = 1e-10;
    double identity_abs = 1e-12;
    double identity_rel = 1e-15;  ///< rounding allowance per unit of ErrorDecomposition::far_abs
    bool strict = true;  ///< throw InvariantViolation on a failed identity
    int workers = 1;
};

inline void validate(const LabOptions& o) {
    if (o.p_max < 1 || 2 * o.p_max + o.extra_terms + 2 > kOrderCap) throw ConfigError("p_max out of range");
    if (o.tail_terms < o.p_max + 1 || o.tail_terms + 2 > kOrderCap) throw ConfigError("tail_terms out of range");
    if (o.extra_terms < 1) throw ConfigError("extra_terms must be positive");
    if (!(o.stop_rel > 0.0) || !(o.moment_rel > 0.0) || !(o.local_rel > 0.0) || !(o.identity_abs > 0.0) ||
        o.identity_rel < 0.0)
        throw ConfigError("tolerances must be positive");
    if (o.workers < 1) throw ConfigError("workers must be >= 1");
}

/// Coefficients indexed -n..n held as scaled complex values.
struct ScaledVector {
    int n = -1;
    std::vector<ScaledC> c;

    ScaledVector() = default;
    explicit ScaledVector(int order) : n(order), c(2 * order + 1) {}

    ScaledC& operator[](int i) { return c[i + n]; }
    const ScaledC& operator[](int i) const { return c[i + n]; }
    bool empty() const { return c.empty(); }
};

namespace detail {

inline ScaledC scaled(Scaled s) { return {cplx(s.m, 0.0), s.e}; }
inline ScaledC scaled(cplx v) {
    if (v == cplx{}) return {};
    int e = 0;
    std::frexp(std::max(std::abs(v.real()), std::abs(v.imag())), &e);
    return {cplx(std::ldexp(v.real(), -e), std::ldexp(v.imag(), -e)), e};
}
inline double mag(ScaledC v) { return std::abs(v.value()); }

/// e^{i n theta} for |n| <= nmax, by short recurrences reseeded every 16 steps.
inline std::vector<cplx> phases(int nmax, double theta) {
    std::vector<cplx> out(2 * nmax + 1);
    out[nmax] = 1.0;
    const cplx w = cis(theta);
    for (int n = 1; n <= nmax; ++n) {
        const cplx v = (n % 16 == 0) ? cis(n * theta) : out[nmax + n - 1] * w;
        out[nmax + n] = v;
        out[nmax - n] = std::conj(v);
    }
    return out;
}

/// out[n] += w a_n(y; O) for |n| <= out.n, with radial J (moments) or H (locals).
inline void add_source_scaled(Radial radial, Vec2 y, Vec2 normal, Vec2 center, double k, OperatorKind op,
                              cplx w, ScaledVector& out) {
    const int nmax = out.n;
    const Vec2 rel = y - center;
    const double rho = rel.norm();
    const bool hank = radial == Radial::H;
    if (hank && rho == 0.0) throw DomainError("singular coefficient at the expansion center");
    const CylinderSeq seq(op == OperatorKind::K ? nmax + 1 : nmax, k * rho, hank);
    const int top = op == OperatorKind::K ? nmax + 1 : nmax;
    const std::vector<cplx> ph = phases(top, -rel.angle());
    auto c = [&](int n) { return (hank ? seq.h(n) : scaled(seq.j(n))) * ph[n + top]; };
    if (op == OperatorKind::S) {
        for (int n = -nmax; n <= nmax; ++n) out[n] = out[n] + c(n) * w;
    } else {
        const cplx em = 0.5 * k * w * cis(-normal.angle()), ep = 0.5 * k * w * cis(normal.angle());
        for (int n = -nmax; n <= nmax; ++n) out[n] = out[n] + (c(n - 1) * em - c(n + 1) * ep);
    }
}

/// B_q(z) e^{i s q theta} for |q| <= qmax.
inline std::vector<ScaledC> phased(const CylinderSeq& seq, bool hank, int qmax, double theta, double s) {
    std::vector<ScaledC> out(2 * qmax + 1);
    const std::vector<cplx> ph = phases(qmax, s * theta);
    for (int q = -qmax; q <= qmax; ++q) out[q + qmax] = (hank ? seq.h(q) : scaled(seq.j(q))) * ph[q + qmax];
    return out;
}

inline double max_abs(const std::vector<cplx>& v) {
    double m = 0.0;
    for (const cplx& z : v) m = std::max(m, std::abs(z));
    return m;
}

}  // namespace detail

/// An error vector (indices -p..p) computed two ways.
struct DualPath {
    std::vector<cplx> by_difference;
    std::vector<cplx> by_recursion;
    std::vector<double> tolerance;  ///< per-index bound on the recursion's remainder truncation
    double scale = 0.0;             ///< max |exact coefficient|

    bool empty() const { return by_recursion.empty(); }
    double gap() const {
        double g = 0.0;
        for (std::size_t i = 0; i < by_recursion.size(); ++i)
            g = std::max(g, std::abs(by_difference[i] - by_recursion[i]));
        return g;
    }
    /// max over indices of gap / (rel max(1, scale) + tolerance)
    double excess(double rel) const {
        double e = 0.0;
        const double floor = rel * std::max(1.0, scale);
        for (std::size_t i = 0; i < by_recursion.size(); ++i)
            e = std::max(e, std::abs(by_difference[i] - by_recursion[i]) / (floor + tolerance[i]));
        return e;
    }
    double max_tolerance() const {
        double t = 0.0;
        for (double v : tolerance) t = std::max(t, v);
        return t;
    }
};

struct DualPathReport {
    double worst_moment_excess = 0.0;  ///< max gap / allowed; <= 1 means agreement
    double worst_m2l_excess = 0.0;
    double worst_local_excess = 0.0;
    int worst_moment_cell = -1;
    int worst_m2l_cell = -1;
    int worst_local_cell = -1;
    int cells_checked = 0;

    bool ok() const { return worst_moment_excess <= 1.0 && worst_m2l_excess <= 1.0 && worst_local_excess <= 1.0; }
};

struct ErrorDecomposition {
    int x_index = 0;
    int p = 0;
    cplx e_s1, e_s2, e_s31, e_s32, e_s4;
    std::array<double, 5> part_tolerance{};
    cplx total;       ///< direct_far - fmm_far
    cplx direct_far;  ///< exact sum over the far cells of the source point
    cplx fmm_far;     ///< L2P of the FMM local moments of its leaf
    double far_abs = 0.0;  ///< sum |G phi s| over the far points plus sum |L_m J_m| of the L2P
    double sum_residual = 0.0;
    double sum_tolerance = 0.0;
    cplx alternative;  ///< leaf-centered form: EL_m J_m plus high-order exact locals
    double alt_residual = 0.0;
    double alt_tolerance = 0.0;

    cplx sum() const { return e_s1 + e_s2 + e_s31 + e_s32 + e_s4; }
    std::array<double, 5> magnitudes() const {
        return {std::abs(e_s1), std::abs(e_s2), std::abs(e_s31), std::abs(e_s32), std::abs(e_s4)};
    }
    bool identity_ok() const { return sum_residual <= sum_tolerance; }
    bool alternative_ok() const { return alt_residual <= alt_tolerance; }
};

class ErrorLab;

/// FMM state at one truncation number plus every error quantity derived from it.
class Analysis {
public:
    int p() const { return p_; }
    const Fmm& fmm() const { return fmm_; }
    /// EM_n of a cell that carries moments (zero for leaves).
    const DualPath& moment_error(int cell) const { return em_.at(cell); }
    /// Error of the M2L part of the local moments (own interaction list only).
    const DualPath& m2l_error(int cell) const { return elm_.at(cell); }
    /// EL_m of a cell at level >= 2.
    const DualPath& local_error(int cell) const { return el_.at(cell); }

private:
    friend class ErrorLab;
    Analysis(const BoundaryDisc& disc, const Quadtree& tree, const FmmConfig& cfg)
        : p_(cfg.p), fmm_(disc, tree, cfg) {}

    int p_;
    Fmm fmm_;
    std::vector<DualPath> em_, elm_, el_;
    // Per cell, orders p < |m| <= p + T + 1: the high-order locals generated by
    // truncated M2L with exact moments (lam_) and with moment errors (lam_err_),
    // and the high-order part of L2L from the parent's FMM locals (psi_).
    std::vector<ScaledVector> lam_, lam_err_, psi_;
    std::vector<ScaledVector> lam_err_tol_;  // propagated EM tolerance, real parts
};

class ErrorLab {
public:
    ErrorLab(const BoundaryDisc& disc, const Quadtree& tree, double k, OperatorKind op = OperatorKind::S,
             LabOptions opt = {})
        : disc_(disc), tree_(tree), k_(k), op_(op), opt_(opt) {
        validate(opt_);
        validate(FmmConfig{k, 1, op, 1});
        if (tree.point_count() != disc.size()) throw ConfigError("tree and discretization disagree");
        const std::size_t nc = tree.cells().size();
        radius_.assign(nc, 0.0);
        for (const Cell& c : tree.cells())
            for (int y : tree.points_of(c.id))
                radius_[c.id] = std::max(radius_[c.id], (disc.knots[y] - c.center).norm());
        build_exact_moments();
        build_exact_locals();
    }

    double k() const { return k_; }
    OperatorKind op() const { return op_; }
    const LabOptions& options() const { return opt_; }
    const BoundaryDisc& disc() const { return disc_; }
    const Quadtree& tree() const { return tree_; }

    /// Ground-truth moments, summed directly over every point of the cell.
    MomentVector exact_moments(int cell, int p) const {
        check_p(p);
        MomentVector out(tree_.cell(cell).center, p);
        for (int n = -p; n <= p; ++n) out[n] = xm_.at(cell)[n].value();
        return out;
    }
    /// Ground-truth local moments from the far sets of the cell and its ancestors.
    LocalVector exact_locals(int cell, int p) const {
        check_p(p);
        if (xl_.at(cell).empty()) throw ConfigError("exact locals exist for cells at level >= 2 only");
        LocalVector out(tree_.cell(cell).center, p);
        for (int m = -p; m <= p; ++m) out[m] = xl_[cell][m].value();
        return out;
    }
    /// Ground-truth local moments from the cell's own interaction list.
    LocalVector exact_m2l_locals(int cell, int p) const {
        check_p(p);
        if (xlm_.at(cell).empty()) throw ConfigError("exact locals exist for cells at level >= 2 only");
        LocalVector out(tree_.cell(cell).center, p);
        for (int m = -p; m <= p; ++m) out[m] = xlm_[cell][m].value();
        return out;
    }

    Analysis analyze(int p) const {
        check_p(p);
        Analysis a(disc_, tree_, FmmConfig{k_, p, op_, opt_.workers});
        const std::size_t nc = tree_.cells().size();
        a.em_.resize(nc);
        a.elm_.resize(nc);
        a.el_.resize(nc);
        a.lam_.resize(nc);
        a.lam_err_.resize(nc);
        a.psi_.resize(nc);
        a.lam_err_tol_.resize(nc);
        moment_errors(a);
        local_errors(a);
        high_order_locals(a);
        return a;
    }

    DualPathReport check_dual_paths(const Analysis& a) const {
        DualPathReport r;
        auto excess = [](const DualPath& d, double rel) { return d.excess(rel); };
        for (const Cell& c : tree_.cells()) {
            if (!a.em_[c.id].empty()) {
                ++r.cells_checked;
                const double e = excess(a.em_[c.id], opt_.moment_rel);
                if (e > r.worst_moment_excess || r.worst_moment_cell < 0) {
                    r.worst_moment_excess = std::max(r.worst_moment_excess, e);
                    r.worst_moment_cell = c.id;
                }
            }
            if (!a.el_[c.id].empty()) {
                const double e1 = excess(a.elm_[c.id], opt_.local_rel);
                if (e1 > r.worst_m2l_excess || r.worst_m2l_cell < 0) {
                    r.worst_m2l_excess = std::max(r.worst_m2l_excess, e1);
                    r.worst_m2l_cell = c.id;
                }
                const double e2 = excess(a.el_[c.id], opt_.local_rel);
                if (e2 > r.worst_local_excess || r.worst_local_cell < 0) {
                    r.worst_local_excess = std::max(r.worst_local_excess, e2);
                    r.worst_local_cell = c.id;
                }
            }
        }
        return r;
    }

    ErrorDecomposition decompose(int x_index, const Analysis& a) const {
        return decompose(x_index, std::vector<const Analysis*>{&a}).front();
    }

    /// Decomposition at several truncation numbers, sharing the per-point work.
    std::vector<ErrorDecomposition> decompose(int x_index, const std::vector<const Analysis*>& runs) const {
        if (x_index < 0 || x_index >= static_cast<int>(disc_.size()))
            throw ConfigError("source index out of range");
        if (runs.empty()) return {};
        const int T = opt_.extra_terms;
        const int leaf = tree_.leaf_of(x_index);
        const Vec2 x = disc_.knots[x_index];
        const std::vector<int> chain = tree_.chain(leaf);

        std::vector<ErrorDecomposition> out(runs.size());
        int p_hi = 0;
        for (std::size_t r = 0; r < runs.size(); ++r) {
            out[r].x_index = x_index;
            out[r].p = runs[r]->p();
            out[r].fmm_far = runs[r]->fmm().far_value(x_index);
            p_hi = std::max(p_hi, runs[r]->p());
        }

        // E1, E2 and the direct far sum, per interaction cell.
        cplx direct;
        double far_abs = 0.0;
        for (int C : chain) {
            for (const InteractionEntry& e : tree_.interaction_list(C)) {
                const int I = e.cell;
                for (int y : tree_.points_of(I)) {
                    const cplx g = kernel(op_, k_, x, disc_.knots[y], disc_.normal[y]) * disc_.phi_s(y);
                    direct += g;
                    far_abs += std::abs(g);
                }
                const Vec2 rel = x - tree_.cell(I).center;
                const double z = k_ * rel.norm();
                const double th = rel.angle();
                const double ratio = radius_[I] / rel.norm();
                const int cap = xm_[I].n - 1;
                CylinderSeq seq(std::min(cap + 1, stop_estimate(p_hi, z, ratio)), z, true);
                auto term = [&](int n) { return (seq.h(n) * cis(n * th) * xm_[I][n]).value(); };
                auto ensure = [&](int n) {
                    if (n > seq.nmax()) seq = CylinderSeq(std::min(cap + 1, std::max(n, 2 * seq.nmax() + 16)), z, true);
                };
                for (std::size_t r = 0; r < runs.size(); ++r) {
                    const int p = runs[r]->p();
                    const DualPath& em = runs[r]->em_[I];
                    double e2tol = 0.0;
                    for (int n = -p; n <= p; ++n) {
                        const ScaledC h = seq.h(n) * cis(n * th);
                        out[r].e_s2 += (h * em.by_recursion[n + p]).value();
                        e2tol += detail::mag(h * cplx(em.tolerance[n + p]));
                    }
                    const int turn = static_cast<int>(std::ceil(z)) + 1;
                    cplx s;
                    double omitted = 0.0;
                    for (int n = p + 1;; ++n) {
                        if (n > cap) {
                            ensure(cap + 1);
                            omitted = std::abs(term(cap + 1)) + std::abs(term(-cap - 1));
                            break;
                        }
                        ensure(n);
                        const cplx t1 = term(n), t2 = term(-n);
                        const double tm = std::abs(t1) + std::abs(t2);
                        if (n >= turn && tm <= opt_.stop_rel * std::abs(s)) {
                            omitted = tm;
                            break;
                        }
                        s += t1 + t2;
                    }
                    out[r].e_s1 += s;
                    out[r].part_tolerance[0] += 10.0 * omitted;
                    out[r].part_tolerance[1] += e2tol;
                }
            }
        }

        // E31, E32 (every chain cell at level >= 2) and E4 (level >= 3).
        for (int C : chain) {
            const Cell& cell = tree_.cell(C);
            if (cell.level < 2) continue;
            const Vec2 rel = x - cell.center;
            const double th = rel.angle();
            const CylinderSeq seq(p_hi + T + 1, k_ * rel.norm(), false);
            for (std::size_t r = 0; r < runs.size(); ++r) {
                const Analysis& a = *runs[r];
                const int p = a.p();
                auto high = [&](const ScaledVector& v, const ScaledVector* tol, cplx& acc, double& acc_tol) {
                    if (v.empty()) return;
                    double last = 0.0;
                    for (int m = p + 1; m <= p + T + 1; ++m) {
                        for (int mm : {m, -m}) {
                            const ScaledC jm = detail::scaled(seq.j(mm)) * cis(mm * th);
                            const cplx t = (jm * v[mm]).value();
                            if (m == p + T + 1) {
                                last += std::abs(t);
                            } else {
                                acc += t;
                                if (tol) acc_tol += detail::mag(jm * (*tol)[mm]);
                            }
                        }
                    }
                    acc_tol += 10.0 * last;
                };
                high(a.lam_[C], nullptr, out[r].e_s31, out[r].part_tolerance[2]);
                cplx e32;
                high(a.lam_err_[C], &a.lam_err_tol_[C], e32, out[r].part_tolerance[3]);
                out[r].e_s32 -= e32;
                if (cell.level >= 3) high(a.psi_[C], nullptr, out[r].e_s4, out[r].part_tolerance[4]);
            }
        }

        // Leaf-centered alternative.
        const Cell& D = tree_.cell(leaf);
        const bool has_far = D.level >= 2;
        CylinderSeq seqd;
        double thd = 0.0;
        if (has_far) {
            const Vec2 rel = x - D.center;
            thd = rel.angle();
            seqd = CylinderSeq(p_hi + T + 1, k_ * rel.norm(), false);
        }
        for (std::size_t r = 0; r < runs.size(); ++r) {
            ErrorDecomposition& d = out[r];
            d.direct_far = direct;
            d.far_abs = far_abs;
            if (has_far) {
                const LocalVector& lt = runs[r]->fmm().locals(leaf);
                for (int m = -lt.p; m <= lt.p; ++m) d.far_abs += std::abs(lt[m] * seqd.j(m).value());
            }
            const double floor = opt_.identity_abs + opt_.identity_rel * d.far_abs;
            d.total = direct - d.fmm_far;
            double tails = 0.0;
            for (double t : d.part_tolerance) tails += t;
            d.sum_residual = std::abs(d.sum() - d.total);
            d.sum_tolerance = floor + tails;
            d.alt_tolerance = floor;
            if (has_far) {
                const int p = d.p;
                const DualPath& el = runs[r]->el_[leaf];
                cplx s;
                double eltol = 0.0;
                for (int m = -p; m <= p; ++m) {
                    const double jm = seqd.j(m).value();
                    s += el.by_recursion[m + p] * jm * cis(m * thd);
                    eltol += std::abs(jm) * el.tolerance[m + p];
                }
                double last = 0.0;
                for (int m = p + 1; m <= p + T + 1; ++m) {
                    const cplx t1 = (detail::scaled(seqd.j(m)) * cis(m * thd) * xl_[leaf][m]).value();
                    const cplx t2 = (detail::scaled(seqd.j(-m)) * cis(-m * thd) * xl_[leaf][-m]).value();
                    if (m == p + T + 1) {
                        last = std::abs(t1) + std::abs(t2);
                    } else {
                        s += t1 + t2;
                    }
                }
                d.alternative = s;
                d.alt_tolerance = floor + 10.0 * last + eltol;
            }
            d.alt_residual = std::abs(d.alternative - d.total);
            if (opt_.strict) enforce(d);
        }
        return out;
    }

    /// Throws InvariantViolation when an identity fails.
    static void enforce(const ErrorDecomposition& d) {
        if (!d.identity_ok())
            throw InvariantViolation("decomposition sum differs from the far-field error at x" +
                                     std::to_string(d.x_index + 1) + ", p=" + std::to_string(d.p) + ": " +
                                     std::to_string(d.sum_residual) + " > " + std::to_string(d.sum_tolerance));
        if (!d.alternative_ok())
            throw InvariantViolation("leaf-centered error form disagrees at x" + std::to_string(d.x_index + 1) +
                                     ", p=" + std::to_string(d.p) + ": " + std::to_string(d.alt_residual) +
                                     " > " + std::to_string(d.alt_tolerance));
    }

private:
    void check_p(int p) const {
        if (p < 1 || p > opt_.p_max)
            throw ConfigError("p must lie in [1, " + std::to_string(opt_.p_max) + "] for this error lab");
    }

    int local_order() const { return opt_.p_max + opt_.extra_terms + 1; }

    /// Sequence length after which |term| has dropped by stop_rel from order p.
    int stop_estimate(int p, double z, double ratio) const {
        if (!(ratio < 1.0)) return opt_.tail_terms + 1;
        const double decay = std::log(opt_.stop_rel) / std::log(ratio);
        const double n = std::max<double>(p, std::ceil(z) + 1) + decay + 16;
        return static_cast<int>(std::min<double>(n, opt_.tail_terms + 1));
    }

    /// Moment order kept for a cell: far enough that every remainder using its
    /// moments has decayed by stop_rel, and never beyond tail_terms + 1.
    int moment_order(const Cell& I) const {
        int need = opt_.p_max + opt_.extra_terms + 1;
        for (const auto& [C, z_near, z_far, ratio] : uses_[I.id]) {
            need = std::max(need, stop_estimate(opt_.p_max, z_far, ratio));
            need = std::max(need, stop_estimate(opt_.p_max, z_near + opt_.p_max, radius_[I.id] * k_ / z_near) + 1);
        }
        return std::min(need, opt_.tail_terms + 1);
    }

    /// For each source cell, every (target cell, k|O_C - O_I|, max k|x - O_I|,
    /// max |y - O_I| / |x - O_I|) it is listed for.
    void collect_uses() {
        uses_.assign(tree_.cells().size(), {});
        for (const Cell& C : tree_.cells()) {
            const std::vector<int> xs = tree_.points_of(C.id);
            for (const InteractionEntry& e : tree_.interaction_list(C.id)) {
                const Vec2 oi = tree_.cell(e.cell).center;
                double dmin = std::numeric_limits<double>::infinity(), dmax = 0.0;
                for (int x : xs) {
                    const double dx = (disc_.knots[x] - oi).norm();
                    dmin = std::min(dmin, dx);
                    dmax = std::max(dmax, dx);
                }
                uses_[e.cell].push_back({C.id, k_ * (C.center - oi).norm(), k_ * dmax, radius_[e.cell] / dmin});
            }
        }
    }

    void build_exact_moments() {
        collect_uses();
        const std::size_t nc = tree_.cells().size();
        xm_.assign(nc, {});
        parallel_for(opt_.workers, nc, [&](std::size_t id) {
            const Cell& c = tree_.cell(static_cast<int>(id));
            ScaledVector v(moment_order(c));
            for (int y : tree_.points_of(c.id))
                detail::add_source_scaled(Radial::J, disc_.knots[y], disc_.normal[y], c.center, k_, op_,
                                          disc_.phi_s(y), v);
            xm_[id] = std::move(v);
        });
    }

    void build_exact_locals() {
        const std::size_t nc = tree_.cells().size();
        xl_.assign(nc, {});
        xlm_.assign(nc, {});
        const int order = local_order();
        parallel_for(opt_.workers, nc, [&](std::size_t id) {
            const Cell& c = tree_.cell(static_cast<int>(id));
            if (c.level < 2) return;
            ScaledVector own(order), rest(order);
            for (int A : tree_.chain(c.id)) {
                if (tree_.cell(A).level < 2) break;
                ScaledVector& dst = A == c.id ? own : rest;
                for (const InteractionEntry& e : tree_.interaction_list(A))
                    for (int y : tree_.points_of(e.cell))
                        detail::add_source_scaled(Radial::H, disc_.knots[y], disc_.normal[y], c.center, k_, op_,
                                                  disc_.phi_s(y), dst);
            }
            for (std::size_t i = 0; i < rest.c.size(); ++i) rest.c[i] = rest.c[i] + own.c[i];
            xl_[id] = std::move(rest);
            xlm_[id] = std::move(own);
        });
    }

    /// EM by difference and by the parent-from-children recursion, deepest level first.
    void moment_errors(Analysis& a) const {
        const int p = a.p();
        const int T = opt_.extra_terms;
        for (int l = tree_.max_level(); l >= 0; --l) {
            const std::vector<int>& ids = tree_.level(l);
            parallel_for(opt_.workers, ids.size(), [&](std::size_t t) {
                const Cell& c = tree_.cell(ids[t]);
                if (!a.fmm().has_moments(c.id)) return;
                DualPath d;
                d.by_difference.resize(2 * p + 1);
                d.by_recursion.assign(2 * p + 1, cplx{});
                d.tolerance.assign(2 * p + 1, 0.0);
                const MomentVector& mt = a.fmm().moments(c.id);
                for (int n = -p; n <= p; ++n) {
                    const cplx ex = xm_[c.id][n].value();
                    d.by_difference[n + p] = ex - mt[n];
                    d.scale = std::max(d.scale, std::abs(ex));
                }
                for (int ch : c.children) {
                    if (c.is_leaf()) break;
                    const DualPath& sub = a.em_[ch];
                    const Vec2 rel = tree_.cell(ch).center - c.center;
                    const int qmax = 2 * p + T + 1;
                    const std::vector<ScaledC> jq =
                        detail::phased(CylinderSeq(qmax, k_ * rel.norm(), false), false, qmax, rel.angle(), -1.0);
                    auto J = [&](int q) { return jq[q + qmax]; };
                    for (int n = -p; n <= p; ++n) {
                        cplx s;
                        double tol = 0.0;
                        for (int l2 = -p; l2 <= p; ++l2) {
                            const cplx j = J(n - l2).value();
                            s += j * sub.by_recursion[l2 + p];
                            tol += std::abs(j) * sub.tolerance[l2 + p];
                        }
                        for (int l2 = p + 1; l2 <= p + T; ++l2)
                            s += (J(n - l2) * xm_[ch][l2]).value() + (J(n + l2) * xm_[ch][-l2]).value();
                        const double omit = detail::mag(J(n - p - T - 1) * xm_[ch][p + T + 1]) +
                                            detail::mag(J(n + p + T + 1) * xm_[ch][-p - T - 1]);
                        d.by_recursion[n + p] += s;
                        d.tolerance[n + p] += tol + 10.0 * omit;
                    }
                }
                a.em_[c.id] = std::move(d);
            });
        }
    }

    /// ELM and EL by difference and by recursion, coarsest level first.
    void local_errors(Analysis& a) const {
        const int p = a.p();
        const int T = opt_.extra_terms;
        for (int l = 2; l <= tree_.max_level(); ++l) {
            const std::vector<int>& ids = tree_.level(l);
            parallel_for(opt_.workers, ids.size(), [&](std::size_t t) {
                const Cell& c = tree_.cell(ids[t]);
                DualPath dm, dl;
                dm.by_difference.resize(2 * p + 1);
                dl.by_difference.resize(2 * p + 1);
                dm.by_recursion.assign(2 * p + 1, cplx{});
                dm.tolerance.assign(2 * p + 1, 0.0);
                const LocalVector& lm = a.fmm().m2l_locals(c.id);
                const LocalVector& lt = a.fmm().locals(c.id);
                for (int m = -p; m <= p; ++m) {
                    const cplx exm = xlm_[c.id][m].value(), ex = xl_[c.id][m].value();
                    dm.by_difference[m + p] = exm - lm[m];
                    dl.by_difference[m + p] = ex - lt[m];
                    dm.scale = std::max(dm.scale, std::abs(exm));
                    dl.scale = std::max(dl.scale, std::abs(ex));
                }
                for (const InteractionEntry& e : tree_.interaction_list(c.id)) m2l_error_term(a, c, e.cell, dm);

                dl.by_recursion = dm.by_recursion;
                dl.tolerance = dm.tolerance;
                if (l >= 3) {
                    const Cell& P = tree_.cell(c.parent);
                    const DualPath& up = a.el_[P.id];
                    const Vec2 rel = c.center - P.center;
                    const int qmax = 2 * p + T + 1;
                    const std::vector<ScaledC> jq =
                        detail::phased(CylinderSeq(qmax, k_ * rel.norm(), false), false, qmax, rel.angle(), 1.0);
                    auto J = [&](int q) { return jq[q + qmax]; };
                    for (int m = -p; m <= p; ++m) {
                        cplx s;
                        double tol = 0.0;
                        for (int l2 = -p; l2 <= p; ++l2) {
                            const cplx j = J(l2 - m).value();
                            s += j * up.by_recursion[l2 + p];
                            tol += std::abs(j) * up.tolerance[l2 + p];
                        }
                        for (int l2 = p + 1; l2 <= p + T; ++l2)
                            s += (J(l2 - m) * xl_[P.id][l2]).value() + (J(-l2 - m) * xl_[P.id][-l2]).value();
                        const double omit = detail::mag(J(p + T + 1 - m) * xl_[P.id][p + T + 1]) +
                                            detail::mag(J(-p - T - 1 - m) * xl_[P.id][-p - T - 1]);
                        dl.by_recursion[m + p] += s;
                        dl.tolerance[m + p] += tol + 10.0 * omit;
                    }
                }
                a.elm_[c.id] = std::move(dm);
                a.el_[c.id] = std::move(dl);
            });
        }
    }

    /// Adds the contribution of interaction cell I to the recursion for ELM(C):
    /// sum_{|n|<=p} EM_n H_{n-m} e^{i(n-m)th} plus the tail over |n| > p with exact moments.
    void m2l_error_term(const Analysis& a, const Cell& c, int I, DualPath& dm) const {
        const int p = a.p();
        const Vec2 rel = c.center - tree_.cell(I).center;
        const double z = k_ * rel.norm();
        const double th = rel.angle();
        const int nlen = std::min(xm_[I].n - 1, stop_estimate(p, z + p, radius_[I] / rel.norm()));
        const int qmax = nlen + p + 1;
        const std::vector<ScaledC> hq = detail::phased(CylinderSeq(qmax, z, true), true, qmax, th, 1.0);
        auto H = [&](int q) { return hq[q + qmax]; };
        const DualPath& em = a.em_[I];
        std::vector<cplx> tail(2 * p + 1);
        for (int m = -p; m <= p; ++m) {
            cplx s;
            double tol = 0.0;
            for (int n = -p; n <= p; ++n) {
                s += (H(n - m) * em.by_recursion[n + p]).value();
                tol += detail::mag(H(n - m) * cplx(em.tolerance[n + p]));
            }
            dm.by_recursion[m + p] += s;
            dm.tolerance[m + p] += tol;
        }
        const int turn = static_cast<int>(std::ceil(z)) + p + 1;
        std::vector<double> omitted(2 * p + 1);
        for (int n = p + 1;; ++n) {
            double tmax = 0.0, smax = 0.0;
            for (int m = -p; m <= p; ++m) {
                const cplx t1 = (H(n - m) * xm_[I][n]).value(), t2 = (H(-n - m) * xm_[I][-n]).value();
                omitted[m + p] = std::abs(t1) + std::abs(t2);
                if (n > nlen) continue;
                tail[m + p] += t1 + t2;
                tmax = std::max(tmax, omitted[m + p]);
                smax = std::max(smax, std::abs(tail[m + p]));
            }
            if (n > nlen || (n >= turn && tmax <= opt_.stop_rel * smax)) break;
        }
        for (int m = -p; m <= p; ++m) {
            dm.by_recursion[m + p] += tail[m + p];
            dm.tolerance[m + p] += 10.0 * omitted[m + p];
        }
    }

    /// Orders p < |m| <= p + T + 1 of the local expansions that the FMM discards.
    void high_order_locals(Analysis& a) const {
        const int p = a.p();
        const int top = p + opt_.extra_terms + 1;
        const std::size_t nc = tree_.cells().size();
        parallel_for(opt_.workers, nc, [&](std::size_t id) {
            const Cell& c = tree_.cell(static_cast<int>(id));
            if (c.level < 2) return;
            ScaledVector lam(top), lerr(top), ltol(top);
            for (const InteractionEntry& e : tree_.interaction_list(c.id)) {
                const int I = e.cell;
                const Vec2 rel = c.center - tree_.cell(I).center;
                const int qmax = top + p;
                const std::vector<ScaledC> hq =
                    detail::phased(CylinderSeq(qmax, k_ * rel.norm(), true), true, qmax, rel.angle(), 1.0);
                const DualPath& em = a.em_[I];
                for (int m = p + 1; m <= top; ++m) {
                    for (int mm : {m, -m}) {
                        ScaledC s, se, st;
                        for (int n = -p; n <= p; ++n) {
                            const ScaledC h = hq[n - mm + qmax];
                            s = s + h * xm_[I][n];
                            se = se + h * em.by_recursion[n + p];
                            st = st + ScaledC{cplx(std::abs(h.m)), h.e} * cplx(em.tolerance[n + p]);
                        }
                        lam[mm] = lam[mm] + s;
                        lerr[mm] = lerr[mm] + se;
                        ltol[mm] = ltol[mm] + st;
                    }
                }
            }
            a.lam_[id] = std::move(lam);
            a.lam_err_[id] = std::move(lerr);
            a.lam_err_tol_[id] = std::move(ltol);
            if (c.level >= 3) {
                const LocalVector& lp = a.fmm().locals(c.parent);
                const Vec2 rel = c.center - tree_.cell(c.parent).center;
                const int qmax = top + p;
                const std::vector<ScaledC> jq =
                    detail::phased(CylinderSeq(qmax, k_ * rel.norm(), false), false, qmax, rel.angle(), 1.0);
                ScaledVector psi(top);
                for (int m = p + 1; m <= top; ++m)
                    for (int mm : {m, -m}) {
                        ScaledC s;
                        for (int l2 = -p; l2 <= p; ++l2) s = s + jq[l2 - mm + qmax] * lp[l2];
                        psi[mm] = s;
                    }
                a.psi_[id] = std::move(psi);
            }
        });
    }

    const BoundaryDisc& disc_;
    const Quadtree& tree_;
    double k_;
    OperatorKind op_;
    LabOptions opt_;
    std::vector<double> radius_;
    struct Use {
        int target;
        double z_near, z_far, ratio;
    };
    std::vector<std::vector<Use>> uses_;
    std::vector<ScaledVector> xm_;   // exact moments, order from moment_order()
    std::vector<ScaledVector> xl_;   // exact locals to order p_max + T + 1
    std::vector<ScaledVector> xlm_;  // exact own-list locals, same orders
};

// ---------------------------------------------------------------------------
// Analytic bounds (single-layer operator unless stated otherwise)

struct BoundSetting {
    double k = 5.0;
    double d = 4.0;  ///< root side
    double A = 1.0;  ///< max |phi s|
    int n_half = 1;  ///< N
    int max_level = 0;
    double c_thm8 = 1.2;
    GeometryConstants g{};

    double d2() const { return level_distance(d, 2); }
    double d3() const { return level_distance(d, 3); }
};

inline BoundSetting bound_setting(const BoundaryDisc& disc, const Quadtree& tree, double k, double c_thm8 = 1.2) {
    BoundSetting s;
    s.k = k;
    s.d = tree.side();
    s.A = sup_norm_a(disc);
    s.n_half = disc.n_half;
    s.max_level = tree.max_level();
    s.c_thm8 = c_thm8;
    return s;
}

/// Per-level-difference maxima of N_i(x_j) over all source points.
inline FarCounts max_far_counts(const Quadtree& tree) {
    FarCounts out;
    for (std::size_t j = 0; j < tree.point_count(); ++j) {
        const FarCounts f = tree.far_counts(static_cast<int>(j));
        for (int i = 0; i < 3; ++i) out.n[i] = std::max(out.n[i], f.n[i]);
        out.near = std::max(out.near, f.near);
    }
    for (int i = 2; i >= 0; --i)
        if (out.n[i] != 0) {
            out.max_diff = i;
            break;
        }
    return out;
}

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw NotApplicable(what + " threshold not met");
}
inline bool any_far(const FarCounts& f) { return f.n[0] + f.n[1] + f.n[2] > 0; }
}  // namespace detail

/// |EM_n| bound for a non-leaf cell at `level` holding `count` points.
inline double threshold_lemma9(const BoundSetting& s, int level) {
    return std::numbers::e * s.k * level_distance(s.d, level) / 2.0;
}
inline bool applicable_lemma9(int p, const BoundSetting& s, int level) { return p >= threshold_lemma9(s, level); }
inline double bound_lemma9(int p, const BoundSetting& s, int level, long count) {
    detail::require(applicable_lemma9(p, s, level), "moment-error bound");
    const double v = std::numbers::e * s.k * level_distance(s.d, level) / (2.0 * p + 2.0);
    return 4.0 * std::numbers::sqrt2 * s.A * count / std::sqrt(std::numbers::pi * (p + 1)) * std::pow(v, p + 1) /
           (1.0 - v);
}

inline double threshold_thm4(const BoundSetting& s, const FarCounts& f) {
    return detail::any_far(f) ? s.g.eps[f.max_diff] * s.k * s.d / 8.0 : 0.0;
}
inline bool applicable_thm4(int p, const BoundSetting& s, const FarCounts& f) { return p >= threshold_thm4(s, f); }
/// |E_S,1(x)|
inline double bound_thm4(int p, const BoundSetting& s, const FarCounts& f) {
    detail::require(applicable_thm4(p, s, f), "E_S,1 bound");
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        if (f.n[i] == 0) continue;
        const double r = s.g.r(i);
        sum += f.n[i] * cap_c(p + 1, s.g.eps[i] * s.k * s.d / 8.0) * std::pow(r, p + 1) / (1.0 - r);
    }
    return 4.0 * s.A / (std::numbers::pi * (p + 1)) * sum;
}

inline double threshold_thm5(const BoundSetting& s) { return 3.0 * s.k * s.d / 8.0 + 1.0; }
inline bool applicable_thm5(int p, const BoundSetting& s) { return p >= threshold_thm5(s); }
/// |E_S,2(x)|
inline double bound_thm5(int p, const BoundSetting& s) {
    detail::require(applicable_thm5(p, s), "E_S,2 bound");
    constexpr double e = std::numbers::e, pi = std::numbers::pi;
    const double varsigma = e * s.k * s.d2() / (2.0 * p + 2.0);
    return 4.0 * s.A * s.n_half * e * e * s.k * s.d * cap_c(p, 3.0 * std::numbers::sqrt2 * s.k * s.d2()) /
           (pi * std::sqrt(pi * (double(p) * p + p)) * (1.0 - varsigma)) * std::pow(std::numbers::sqrt2 / 6.0, p);
}

inline double threshold_thm6(const BoundSetting& s, const FarCounts& f) {
    return detail::any_far(f) ? s.g.zeta[f.max_diff] * s.k * s.d / 8.0 : 0.0;
}
inline bool applicable_thm6(int p, const BoundSetting& s, const FarCounts& f) { return p >= threshold_thm6(s, f); }
/// |E_S,31(x)|
inline double bound_thm6(int p, const BoundSetting& s, const FarCounts& f) {
    detail::require(applicable_thm6(p, s, f), "E_S,31 bound");
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        if (f.n[i] == 0) continue;
        const double gam = s.g.gamma(i);
        sum += f.n[i] * cap_c(p + 1, s.g.zeta[i] * s.k * s.d / 8.0) * gam *
               std::exp(s.g.eta[i] / (std::numbers::sqrt2 * s.g.zeta[i])) * std::pow(s.g.lambda(i), p) /
               (1.0 - 2.0 * gam);
    }
    return 8.0 * s.A / (std::numbers::pi * (p + 1)) * sum;
}

inline double threshold_thm7(const BoundSetting& s) { return s.k * s.d / 2.0; }
inline bool applicable_thm7(int p, const BoundSetting& s) { return p >= threshold_thm7(s); }
/// |E_S,32(x)|
inline double bound_thm7(int p, const BoundSetting& s) {
    detail::require(applicable_thm7(p, s), "E_S,32 bound");
    constexpr double e = std::numbers::e, pi = std::numbers::pi;
    const double varsigma = e * s.k * s.d2() / (2.0 * p + 2.0);
    const double g0 = s.g.gamma(0);
    return 3.0 * std::numbers::sqrt2 * e * s.k * s.d * s.A * s.n_half *
           cap_c(p + 1, 4.0 * std::numbers::sqrt2 * s.k * s.d2()) /
           (pi * std::sqrt(pi * std::pow(p + 1.0, 5)) * (1.0 - 2.0 * g0) * (1.0 - varsigma)) *
           std::pow(3.0 * e / 32.0, p);
}

inline double threshold_thm8(const BoundSetting& s) { return 3.0 * s.k * s.d / 8.0 + 1.0; }
inline bool applicable_thm8(int p, const BoundSetting& s) { return p >= threshold_thm8(s); }
/// |E_S,4(x)| with the empirical constant c.
inline double bound_thm8(int p, const BoundSetting& s) {
    detail::require(applicable_thm8(p, s), "E_S,4 bound");
    constexpr double e = std::numbers::e, pi = std::numbers::pi;
    const double tau = e * s.k * s.d3() / (p + 1.0);
    return s.c_thm8 * e * e * s.k * s.d * s.n_half * s.A * cap_c(p, 3.0 * std::numbers::sqrt2 * s.k * s.d2()) /
           (pi * std::sqrt(pi * (double(p) * p + p)) * (1.0 - tau)) * std::pow(std::numbers::sqrt2 / 6.0, p);
}

struct Norm2Bound {
    double theoretical = 0.0;
    double empirical = 0.0;  ///< r_I replaced by the measured radius
};

inline double threshold_norm2(const BoundSetting& s, const FarCounts& tree_max) {
    return std::max(threshold_thm5(s), threshold_thm6(s, tree_max));
}
inline bool applicable_norm2(int p, const BoundSetting& s, const FarCounts& tree_max) {
    return p >= threshold_norm2(s, tree_max);
}

/// Asymptotic 2-norm bound of the far-field error over all source points, for
/// S or K, with N_i the tree-wide maxima of N_i(x_j).
inline Norm2Bound bound_norm2(int p, const BoundSetting& s, const FarCounts& tree_max, OperatorKind op,
                              double empirical_r) {
    detail::require(applicable_norm2(p, s, tree_max), "2-norm bound");
    constexpr double pi = std::numbers::pi;
    if (!detail::any_far(tree_max)) return {};
    const int I = tree_max.max_diff;
    const double NI = static_cast<double>(tree_max.n[I]);
    const double N = s.n_half;
    Norm2Bound out;
    if (I == 0) {
        const double g0 = s.g.gamma(0);
        const double core = g0 * std::exp(s.g.eta[0] / (std::numbers::sqrt2 * s.g.zeta[0])) *
                            std::pow(s.g.lambda(0), p) / (1.0 - 2.0 * g0);
        const double v = op == OperatorKind::S
                             ? 8.0 * s.A * NI * std::sqrt(2.0 * N) * core / (pi * (p + 1))
                             : std::ldexp(1.0, s.max_level + 5) * s.A * NI * std::sqrt(N) * core / (pi * s.d);
        return {v, v};
    }
    auto form = [&](double r) {
        if (op == OperatorKind::S)
            return 4.0 * s.A * NI * std::sqrt(2.0 * N) * std::pow(r, p + 1) / (pi * (1.0 - r) * (p + 1));
        return std::ldexp(1.0, s.max_level + 4) * s.A * NI * std::sqrt(2.0 * N) * std::pow(r, p) /
               (pi * s.g.eps[I] * (1.0 - r) * s.d);
    };
    out.theoretical = form(s.g.r(I));
    out.empirical = form(empirical_r);
    return out;
}

/// Per-point bounds; a bound is present only when its threshold holds.
struct BoundReport {
    std::optional<double> bound_es1, bound_es2, bound_es31, bound_es32, bound_es4;
    double threshold_es1 = 0.0, threshold_es2 = 0.0, threshold_es31 = 0.0, threshold_es32 = 0.0,
           threshold_es4 = 0.0;

    std::array<std::optional<double>, 5> values() const {
        return {bound_es1, bound_es2, bound_es31, bound_es32, bound_es4};
    }
};

inline BoundReport bounds_at(int p, const BoundSetting& s, const FarCounts& f) {
    BoundReport r;
    r.threshold_es1 = threshold_thm4(s, f);
    r.threshold_es2 = threshold_thm5(s);
    r.threshold_es31 = threshold_thm6(s, f);
    r.threshold_es32 = threshold_thm7(s);
    r.threshold_es4 = threshold_thm8(s);
    if (applicable_thm4(p, s, f)) r.bound_es1 = bound_thm4(p, s, f);
    if (applicable_thm5(p, s)) r.bound_es2 = bound_thm5(p, s);
    if (applicable_thm6(p, s, f)) r.bound_es31 = bound_thm6(p, s, f);
    if (applicable_thm7(p, s)) r.bound_es32 = bound_thm7(p, s);
    if (applicable_thm8(p, s)) r.bound_es4 = bound_thm8(p, s);
    return r;
}

/// Smallest p, at or above the E_S,1 and E_S,31 thresholds, with
/// bound_thm4 + bound_thm6 <= eps. Throws NotApplicable past p_cap.
inline int suggest_p(double eps, const BoundSetting& s, const FarCounts& f, int p_cap = 200) {
    if (!(eps > 0.0)) throw ConfigError("target accuracy must be positive");
    const int p0 = std::max(1, static_cast<int>(std::ceil(std::max(threshold_thm4(s, f), threshold_thm6(s, f)))));
    for (int p = p0; p <= p_cap; ++p)
        if (bound_thm4(p, s, f) + bound_thm6(p, s, f) <= eps) return p;
    throw NotApplicable("target accuracy unreachable for p <= " + std::to_string(p_cap));
}

/// Per-step decay ratio exp(slope) of the least-squares line through
/// (p, log(p^a |v_p|)); zero values are skipped.
inline double fitted_ratio(const std::vector<int>& p, const std::vector<double>& v, double a = 0.0) {
    if (p.size() != v.size()) throw ConfigError("fit inputs differ in length");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(v[i] > 0.0)) continue;
        const double x = p[i], y = a * std::log(static_cast<double>(p[i])) + std::log(v[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n < 2) throw ConfigError("fit needs at least two positive values");
    const double den = n * sxx - sx * sx;
    if (den == 0.0) throw ConfigError("fit needs two distinct p values");
    return std::exp((n * sxy - sx * sy) / den);
}

}  // namespace hfmm
