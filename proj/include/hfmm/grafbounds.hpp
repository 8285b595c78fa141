#pragma once

/// @file
/// Truncation tails of Graf's addition theorem: brute-force sums, the complex
/// remainder itself, and closed-form upper bounds for the tails.
///
/// With B one of J, Y, H^(1) the symmetric tail is
///   B^B_{m,p}(x, y) = sum_{n>p} |J_n(y)| (|B_{n+m}(x)| + |B_{n-m}(x)|)
/// and the one-sided tail drops the |B_{n-m}| term.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>

#include "hfmm/errors.hpp"
#include "hfmm/geometry.hpp"
#include "hfmm/specfun.hpp"

namespace hfmm {

enum class TailKernel { J, Y, H };
enum class TailForm { one_sided, symmetric };

inline constexpr int kDefaultTailTerms = 1000;

struct TailQuery {
    int m = 0;
    int p = 0;
    double x = 0.0;  ///< outer argument
    double y = 0.0;  ///< inner argument
};

/// A truncated sum together with an estimate of what was left out.
struct TailSum {
    double value = 0.0;
    double tolerance = 0.0;
};

namespace detail {

inline bool kernel_needs_y(TailKernel kernel) { return kernel != TailKernel::J; }

inline Scaled kernel_abs(const CylinderSeq& s, TailKernel kernel, int n) {
    switch (kernel) {
        case TailKernel::J: return {std::abs(s.j(n).m), s.j(n).e};
        case TailKernel::Y: return {std::abs(s.y(n).m), s.y(n).e};
        case TailKernel::H: {
            const ScaledC h = s.h(n);
            return {std::abs(h.m), h.e};
        }
    }
    return {};
}

inline double tail_term(const CylinderSeq& inner, const CylinderSeq& outer, TailKernel kernel,
                        int n, int m, TailForm form) {
    const Scaled jn{std::abs(inner.j(n).m), inner.j(n).e};
    double v = (jn * kernel_abs(outer, kernel, n + m)).value();
    if (form == TailForm::symmetric) v += (jn * kernel_abs(outer, kernel, n - m)).value();
    return v;
}

inline void check_query(TailKernel kernel, const TailQuery& q) {
    check_finite(q.x);
    check_finite(q.y);
    if (q.p < -1) throw DomainError("truncation number must be >= -1 (-1 sums from n = 0)");
    if (q.y < 0.0) throw DomainError("inner argument must be non-negative");
    if (q.x < 0.0) throw DomainError("outer argument must be non-negative");
    if (kernel_needs_y(kernel) && q.x <= 0.0)
        throw DomainError("Y and H tails require a positive outer argument");
}

}  // namespace detail

/// Partial tail sum over n = p+1 .. n_max, with tolerance equal to ten times
/// the first omitted term.
inline TailSum tail_sum(TailKernel kernel, const TailQuery& q, int n_max = kDefaultTailTerms,
                        TailForm form = TailForm::symmetric) {
    detail::check_query(kernel, q);
    if (n_max < 0) throw DomainError("n_max must be non-negative");
    const int am = std::abs(q.m);
    const int top = n_max + 1;
    detail::check_order(top + am);
    const CylinderSeq inner(top, q.y, false);
    const CylinderSeq outer(top + am, q.x, detail::kernel_needs_y(kernel));

    TailSum out;
    for (int n = q.p + 1; n <= n_max; ++n) {
        const double t = detail::tail_term(inner, outer, kernel, n, am, form);
        out.value += t;
        if (t < 1e-300 * out.value) break;
    }
    out.tolerance = 10.0 * detail::tail_term(inner, outer, kernel, top, am, form);
    return out;
}

/// B^B_{m,p}(x, y) truncated at n_max (symmetric form by default).
inline double tail_exact(TailKernel kernel, const TailQuery& q, int n_max = kDefaultTailTerms,
                         TailForm form = TailForm::symmetric) {
    return tail_sum(kernel, q, n_max, form).value;
}

/// eps_{m,p}(x, y): the one-sided Y tail over its n = 0 .. n_max total.
inline double relative_tail(int m, int p, double x, double y, int n_max = kDefaultTailTerms) {
    if (!(x > y) || y < 0.0) throw DomainError("relative tail requires x > y >= 0");
    if (m < 0) throw DomainError("relative tail requires m >= 0");
    const double den =
        tail_sum(TailKernel::Y, {m, -1, x, y}, n_max, TailForm::one_sided).value;
    if (!(den > 0.0) || !std::isfinite(den))
        throw DomainError("degenerate denominator in relative tail");
    if (p >= n_max) return 0.0;
    return tail_sum(TailKernel::Y, {m, p, x, y}, n_max, TailForm::one_sided).value / den;
}

/// Complex Graf remainder
///   R^B_{m,p}(x, y) = sum_{|n|>p} B_{m+n}(|x|) e^{+-i(m+n)th_x} J_n(|y|) e^{-+i n th_y}
/// summed to |n| <= n_max. `sign` selects the upper (+1) or lower (-1) signs.
/// The second form of the theorem corresponds to passing -y.
inline std::complex<double> graf_remainder(TailKernel kernel, int m, int p, Vec2 x, Vec2 y,
                                           int sign = 1, int n_max = kDefaultTailTerms) {
    const double ax = x.norm(), ay = y.norm();
    detail::check_query(kernel, {m, p, ax, ay});
    const int am = std::abs(m);
    detail::check_order(n_max + am);
    const CylinderSeq inner(n_max, ay, false);
    const CylinderSeq outer(n_max + am, ax, detail::kernel_needs_y(kernel));
    const double s = sign >= 0 ? 1.0 : -1.0;
    const double tx = x.angle(), ty = y.angle();
    cplx sum{};
    for (int n = p + 1; n <= n_max; ++n) {
        for (const int nn : {n, -n}) {
            const int o = m + nn;
            const ScaledC b = kernel == TailKernel::Y
                                  ? ScaledC{cplx(outer.y(o).m), outer.y(o).e}
                                  : (kernel == TailKernel::J ? ScaledC{cplx(outer.j(o).m), outer.j(o).e}
                                                             : outer.h(o));
            const ScaledC term = b * inner.j(nn) * cis(s * (o * tx - nn * ty));
            sum += term.value();
        }
    }
    return sum;
}

/// The retained part sum_{|n|<=p} of the same series.
inline std::complex<double> graf_partial(TailKernel kernel, int m, int p, Vec2 x, Vec2 y,
                                         int sign = 1) {
    const double ax = x.norm(), ay = y.norm();
    detail::check_query(kernel, {m, p, ax, ay});
    const int am = std::abs(m);
    detail::check_order(p + am);
    const CylinderSeq inner(p, ay, false);
    const CylinderSeq outer(p + am, ax, detail::kernel_needs_y(kernel));
    const double s = sign >= 0 ? 1.0 : -1.0;
    const double tx = x.angle(), ty = y.angle();
    cplx sum{};
    for (int n = -p; n <= p; ++n) {
        const int o = m + n;
        const double jn = inner.j(n).value();
        cplx b;
        switch (kernel) {
            case TailKernel::J: b = outer.j(o).value(); break;
            case TailKernel::Y: b = outer.y(o).value(); break;
            case TailKernel::H: b = outer.h(o).value(); break;
        }
        sum += b * jn * cis(s * (o * tx - n * ty));
    }
    return sum;
}

/// Left-hand side B_m(|x - y|) e^{+-i m th_{x-y}}.
inline std::complex<double> graf_closed(TailKernel kernel, int m, Vec2 x, Vec2 y, int sign = 1) {
    const Vec2 d = x - y;
    const double r = d.norm();
    const double s = sign >= 0 ? 1.0 : -1.0;
    const cplx phase = cis(s * m * d.angle());
    switch (kernel) {
        case TailKernel::J: return bessel_j(m, r) * phase;
        case TailKernel::Y: return bessel_y(m, r) * phase;
        case TailKernel::H: return hankel1(m, r) * phase;
    }
    return {};
}

enum class BoundKind { jj_l6, jy_l7, jy_l8, bh_from_l7, bh_from_l8, bj_from_l6 };

inline std::string to_string(BoundKind k) {
    switch (k) {
        case BoundKind::jj_l6: return "JJ_L6";
        case BoundKind::jy_l7: return "JY_L7";
        case BoundKind::jy_l8: return "JY_L8";
        case BoundKind::bh_from_l7: return "BH_FROM_L7";
        case BoundKind::bh_from_l8: return "BH_FROM_L8";
        case BoundKind::bj_from_l6: return "BJ_FROM_L6";
    }
    return "?";
}

/// sum_{n>p} |J_n(y)| |J_{n+-m}(x)| <= t^{p+1} / (sqrt(2 pi (p+1)) (1-t)), t = e y / (2p+2).
inline bool applicable_l6(const TailQuery& q) {
    return q.p >= 0 && q.y >= 0.0 && q.p >= std::numbers::e * q.y / 2.0;
}

/// sum_{n>p} |J_n(y)| |Y_{n+m}(x)| via the alpha_{m,p}(r) bound.
inline bool applicable_l7(const TailQuery& q) {
    return q.m >= 0 && q.p >= 0 && q.x > q.y && q.y >= 0.0 && q.p + q.m >= q.x;
}

/// The same one-sided sum via the (2p+m+2)^{m-1} bound.
inline bool applicable_l8(const TailQuery& q) {
    return q.m >= 0 && q.p >= 0 && q.x > 2.0 * q.y && q.y >= 0.0 &&
           q.p >= std::max(static_cast<double>(q.m - 2), q.x);
}

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_l6(const TailQuery& q) {
    if (!applicable_l6(q)) throw NotApplicable("J-J tail bound needs p >= e y / 2");
    if (q.y == 0.0) return kNegInf;
    const double p1 = q.p + 1.0;
    const double t = std::numbers::e * q.y / (2.0 * p1);
    return p1 * std::log(t) - 0.5 * std::log(2.0 * std::numbers::pi * p1) - std::log1p(-t);
}

/// ln sum_{i=0}^{m-1} b^{m-1-i} c^i, exact when b == c.
inline double log_geometric_mix(int m, double b, double c) {
    if (c <= 0.0) return (m - 1) * std::log(b);
    const double lb = std::log(b), lc = std::log(c);
    double hi = kNegInf;
    for (int i = 0; i < m; ++i) hi = std::max(hi, (m - 1 - i) * lb + i * lc);
    double acc = 0.0;
    for (int i = 0; i < m; ++i) acc += std::exp((m - 1 - i) * lb + i * lc - hi);
    return hi + std::log(acc);
}

inline double log_l7(const TailQuery& q) {
    if (!applicable_l7(q)) throw NotApplicable("J-Y tail bound needs x > y and p + m >= x");
    if (q.y == 0.0) return kNegInf;
    const double r = q.y / q.x;
    double log_alpha;
    if (q.m == 0) {
        log_alpha = -std::log(q.p + 1.0);
    } else {
        const double b = 2.0 * q.p + 2.0 * q.m + 1.0;
        const double c = (2.0 * q.m - 1.0) * r / (1.0 - r);
        log_alpha = std::numbers::ln2 + log_geometric_mix(q.m, b, c);
    }
    return log_alpha + log_cap_c(q.p + q.m + 1, q.x) + (q.p + 1.0) * std::log(r) -
           std::log(std::numbers::pi) - q.m * std::log(q.x) - std::log1p(-r);
}

inline double log_l8(const TailQuery& q) {
    if (!applicable_l8(q))
        throw NotApplicable("sharp J-Y tail bound needs x > 2y and p >= max(m - 2, x)");
    if (q.y == 0.0) return kNegInf;
    const double r = q.y / q.x;
    return std::numbers::ln2 + (q.m - 1.0) * std::log(2.0 * q.p + q.m + 2.0) +
           log_cap_c(q.p + q.m + 1, q.x) + (q.p + 1.0) * std::log(r) -
           std::log(std::numbers::pi) - q.m * std::log(q.x) - std::log1p(-2.0 * r);
}

}  // namespace detail

inline double bound_jj_l6(const TailQuery& q) { return std::exp(detail::log_l6(q)); }
inline double bound_jy_l7(const TailQuery& q) { return std::exp(detail::log_l7(q)); }
inline double bound_jy_l8(const TailQuery& q) { return std::exp(detail::log_l8(q)); }

/// Which one-sided bound backs the H-tail bound for q (|m| is used).
inline BoundKind bh_route(const TailQuery& q) {
    const TailQuery a{std::abs(q.m), q.p, q.x, q.y};
    if (applicable_l8(a)) return BoundKind::bh_from_l8;
    if (applicable_l7(a)) return BoundKind::bh_from_l7;
    throw NotApplicable("H tail bound needs x > y and p + |m| >= x");
}

/// B^H_{m,p}(x, y) <= 4 sum_{n>p} |J_n(y)| |Y_{n+|m|}(x)|, bounded by bound_jy_l8 when
/// it applies and by bound_jy_l7 otherwise.
inline double bound_bh(const TailQuery& q) {
    const TailQuery a{std::abs(q.m), q.p, q.x, q.y};
    return 4.0 * (bh_route(q) == BoundKind::bh_from_l8 ? bound_jy_l8(a) : bound_jy_l7(a));
}

/// B^J_{m,p}(x, y) <= 2 x (J-J tail bound); independent of m and x.
inline double bound_bj(const TailQuery& q) { return 2.0 * bound_jj_l6(q); }

inline bool applicable(BoundKind kind, const TailQuery& q) {
    const TailQuery a{std::abs(q.m), q.p, q.x, q.y};
    switch (kind) {
        case BoundKind::jj_l6:
        case BoundKind::bj_from_l6: return applicable_l6(q);
        case BoundKind::jy_l7: return applicable_l7(q);
        case BoundKind::jy_l8: return applicable_l8(q);
        case BoundKind::bh_from_l7: return applicable_l7(a);
        case BoundKind::bh_from_l8: return applicable_l8(a);
    }
    return false;
}

inline double bound(BoundKind kind, const TailQuery& q) {
    const TailQuery a{std::abs(q.m), q.p, q.x, q.y};
    switch (kind) {
        case BoundKind::jj_l6: return bound_jj_l6(q);
        case BoundKind::jy_l7: return bound_jy_l7(q);
        case BoundKind::jy_l8: return bound_jy_l8(q);
        case BoundKind::bh_from_l7: return 4.0 * bound_jy_l7(a);
        case BoundKind::bh_from_l8: return 4.0 * bound_jy_l8(a);
        case BoundKind::bj_from_l6: return bound_bj(q);
    }
    return 0.0;
}

}  // namespace hfmm
