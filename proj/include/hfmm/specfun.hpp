#pragma once

/// @file
/// Integer-order cylinder functions J_n, Y_n, H_n^(1) of real argument, the
/// normalized Neumann factor C_n(z), and ln Gamma.
///
/// J_n comes from Miller's backward recurrence normalized by
/// J_0 + 2 sum J_2k = 1; Y_0 and Y_1 come from the Neumann series over the
/// same even-order J values and higher orders from forward recurrence.
/// Sequences are stored as mantissa/exponent pairs so that orders far above
/// the argument neither overflow nor underflow.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "hfmm/errors.hpp"
#include "hfmm/geometry.hpp"

namespace hfmm {

inline constexpr int kOrderCap = 2048;

/// 2^k, exact; uses a direct bit pattern inside the normal range.
inline double pow2(int k) {
    if (k >= -1022 && k <= 1023) return std::bit_cast<double>(static_cast<std::uint64_t>(k + 1023) << 52);
    return std::ldexp(1.0, k);
}

/// Real value m * 2^e.
struct Scaled {
    double m = 0.0;
    int e = 0;

    static Scaled of(double v) {
        int ex = 0;
        const double mant = std::frexp(v, &ex);
        return {mant, ex};
    }
    double value() const { return std::ldexp(m, e); }
    bool is_zero() const { return m == 0.0; }
    double log_abs() const {
        if (m == 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(std::abs(m)) + e * std::numbers::ln2;
    }
    int sign() const { return (m > 0.0) - (m < 0.0); }
    Scaled operator-() const { return {-m, e}; }
};

/// Complex value m * 2^e.
struct ScaledC {
    cplx m{};
    int e = 0;

    cplx value() const {
        if (e >= -1022 && e <= 1023) return m * pow2(e);
        return {std::ldexp(m.real(), e), std::ldexp(m.imag(), e)};
    }
};

inline Scaled operator*(Scaled a, Scaled b) { return {a.m * b.m, a.e + b.e}; }
inline ScaledC operator*(Scaled a, cplx c) { return {a.m * c, a.e}; }
inline ScaledC operator*(ScaledC a, cplx c) { return {a.m * c, a.e}; }
inline ScaledC operator*(ScaledC a, Scaled b) { return {a.m * b.m, a.e + b.e}; }
inline ScaledC operator*(ScaledC a, ScaledC b) { return {a.m * b.m, a.e + b.e}; }

/// Sum of two scaled complex numbers, aligned to the larger exponent.
inline ScaledC operator+(ScaledC a, ScaledC b) {
    if (a.m == cplx{}) return b;
    if (b.m == cplx{}) return a;
    if (a.e == b.e) return {a.m + b.m, a.e};
    if (a.e < b.e) std::swap(a, b);
    const int shift = b.e - a.e;
    if (shift < -1022) return a;
    const double f = pow2(shift);
    return {{a.m.real() + b.m.real() * f, a.m.imag() + b.m.imag() * f}, a.e};
}
inline ScaledC operator-(ScaledC a, ScaledC b) { return a + ScaledC{-b.m, b.e}; }

namespace detail {

inline constexpr int kRescaleBits = 400;
inline constexpr double kTinyArgument = 1e-100;
inline constexpr double kEulerGamma = std::numbers::egamma;

inline void check_order(int n) {
    if (n > kOrderCap || n < -kOrderCap)
        throw DomainError("order " + std::to_string(n) + " exceeds order cap " +
                          std::to_string(kOrderCap));
}

inline void check_finite(double z) {
    if (!std::isfinite(z)) throw DomainError("non-finite argument");
}

inline Scaled normalize(double m, int e) {
    if (m == 0.0) return {};
    int ex = 0;
    const double mant = std::frexp(m, &ex);
    return {mant, e + ex};
}

inline Scaled reflect(Scaled v, int n) { return (n % 2 != 0) ? -v : v; }

struct MillerResult {
    std::vector<Scaled> j;  // orders 0..nmax
    double y0 = 0.0;
    double y1 = 0.0;
};

/// Leading-term forms for arguments so small that z^2 corrections vanish in
/// double precision.
inline MillerResult tiny_argument(int nmax, double z) {
    MillerResult out;
    out.j.resize(nmax + 1);
    const double lhalf = std::log(z / 2.0);
    for (int n = 0; n <= nmax; ++n) {
        const double lg = n * lhalf - std::lgamma(n + 1.0);
        const double bits = lg / std::numbers::ln2;
        const int e = static_cast<int>(std::floor(bits));
        out.j[n] = normalize(std::exp2(bits - e), e);
    }
    out.y0 = (2.0 / std::numbers::pi) * (lhalf + kEulerGamma);
    out.y1 = -2.0 / (std::numbers::pi * z);
    return out;
}

/// Backward recurrence for J_0..J_nmax at z > 0, plus the Neumann-series
/// seeds Y_0, Y_1 built from the same sequence.
inline MillerResult miller(int nmax_req, double z) {
    const int nmax = std::max(nmax_req, 1);
    if (z < kTinyArgument) {
        MillerResult tiny = tiny_argument(nmax, z);
        tiny.j.resize(nmax_req + 1);
        return tiny;
    }
    const double top = std::max(static_cast<double>(nmax), z);
    const int start = static_cast<int>(std::ceil(top)) + 20 +
                      static_cast<int>(std::ceil(10.0 * std::sqrt(top)));

    std::vector<double> fm(nmax + 1, 0.0);
    std::vector<int> fe(nmax + 1, 0);
    double f_up = 0.0;  // f_{n+1}
    double f = 1.0;     // f_n
    int shift = 0;
    double s = 0.0, t0 = 0.0, t1 = 0.0;

    auto accumulate = [&](int n, double v) {
        if (n == 0) {
            s += v;
        } else if (n % 2 == 0) {
            s += 2.0 * v;
            const int k = n / 2;
            t0 += ((k % 2) ? -v : v) / k;
        } else {
            const int k1 = (n + 1) / 2;
            t1 += ((k1 % 2) ? -v : v) / k1;
            const int k2 = (n - 1) / 2;
            if (k2 >= 1) t1 -= ((k2 % 2) ? -v : v) / k2;
        }
    };
    accumulate(start, f);
    for (int n = start; n >= 1; --n) {
        const double down = (2.0 * n / z) * f - f_up;
        f_up = f;
        f = down;
        if (std::abs(f) > std::ldexp(1.0, kRescaleBits)) {
            f = std::ldexp(f, -kRescaleBits);
            f_up = std::ldexp(f_up, -kRescaleBits);
            s = std::ldexp(s, -kRescaleBits);
            t0 = std::ldexp(t0, -kRescaleBits);
            t1 = std::ldexp(t1, -kRescaleBits);
            shift += kRescaleBits;
        }
        const int idx = n - 1;
        accumulate(idx, f);
        if (idx <= nmax) {
            fm[idx] = f;
            fe[idx] = shift;
        }
    }

    MillerResult out;
    out.j.resize(nmax + 1);
    for (int n = 0; n <= nmax; ++n) out.j[n] = normalize(fm[n] / s, fe[n] - shift);

    const double j0 = out.j[0].value();
    const double j1 = out.j[1].value();
    out.j.resize(nmax_req + 1);
    const double lg = std::log(z / 2.0) + kEulerGamma;
    out.y0 = (2.0 / std::numbers::pi) * lg * j0 - (4.0 / std::numbers::pi) * (t0 / s);
    out.y1 = (2.0 / std::numbers::pi) * (lg * j1 - j0 / z) + (2.0 / std::numbers::pi) * (t1 / s);
    return out;
}

inline std::vector<Scaled> forward_y(int nmax, double z, double y0, double y1) {
    std::vector<Scaled> y(nmax + 1);
    y[0] = Scaled::of(y0);
    if (nmax == 0) return y;
    y[1] = Scaled::of(y1);
    double a = y0, b = y1;
    int shift = 0;
    for (int n = 1; n < nmax; ++n) {
        const double c = (2.0 * n / z) * b - a;
        a = b;
        b = c;
        if (std::abs(b) > std::ldexp(1.0, kRescaleBits)) {
            a = std::ldexp(a, -kRescaleBits);
            b = std::ldexp(b, -kRescaleBits);
            shift += kRescaleBits;
        }
        y[n + 1] = normalize(b, shift);
    }
    return y;
}

}  // namespace detail

/// J_n and (optionally) Y_n for orders 0..nmax at one argument z >= 0.
class CylinderSeq {
public:
    CylinderSeq() = default;

    CylinderSeq(int nmax, double z, bool with_y) : z_(z) {
        detail::check_finite(z);
        if (nmax < 0) throw DomainError("negative maximum order");
        detail::check_order(nmax);
        if (z < 0.0) throw DomainError("sequence argument must be non-negative");
        if (z == 0.0) {
            if (with_y) throw DomainError("Y_n(0) is singular");
            j_.assign(nmax + 1, Scaled{});
            j_[0] = Scaled::of(1.0);
            return;
        }
        detail::MillerResult mr = detail::miller(nmax, z);
        j_ = std::move(mr.j);
        if (with_y) y_ = detail::forward_y(nmax, z, mr.y0, mr.y1);
    }

    double z() const { return z_; }
    int nmax() const { return static_cast<int>(j_.size()) - 1; }
    bool has_y() const { return !y_.empty(); }

    /// J_n for |n| <= nmax, using J_{-n} = (-1)^n J_n.
    Scaled j(int n) const { return n >= 0 ? j_[n] : detail::reflect(j_[-n], n); }
    /// Y_n for |n| <= nmax, using Y_{-n} = (-1)^n Y_n.
    Scaled y(int n) const { return n >= 0 ? y_[n] : detail::reflect(y_[-n], n); }
    /// H_n^(1) = J_n + i Y_n as a scaled complex value.
    ScaledC h(int n) const {
        const Scaled a = j(n), b = y(n);
        if (a.is_zero()) return {cplx(0.0, b.m), b.e};
        const int e = std::max(a.e, b.e);
        return {cplx(std::ldexp(a.m, a.e - e), std::ldexp(b.m, b.e - e)), e};
    }

private:
    double z_ = 0.0;
    std::vector<Scaled> j_;
    std::vector<Scaled> y_;
};

/// Bessel function of the first kind J_n(z), any integer order, real z.
inline double bessel_j(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (z < 0.0) {
        const double v = bessel_j(n, -z);
        return (n % 2 != 0) ? -v : v;
    }
    const int an = std::abs(n);
    if (z == 0.0) return an == 0 ? 1.0 : 0.0;
    const CylinderSeq seq(an, z, false);
    return seq.j(n).value();
}

/// Neumann function Y_n(z) for z > 0.
inline double bessel_y(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (z <= 0.0) throw DomainError("Y_n requires z > 0");
    const CylinderSeq seq(std::abs(n), z, true);
    const double v = seq.y(n).value();
    if (!std::isfinite(v)) throw DomainError("Y_n(z) overflows double precision");
    return v;
}

/// Hankel function of the first kind H_n^(1)(z) = J_n(z) + i Y_n(z), z > 0.
inline cplx hankel1(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (z <= 0.0) throw DomainError("H_n requires z > 0");
    const CylinderSeq seq(std::abs(n), z, true);
    const double yv = seq.y(n).value();
    if (!std::isfinite(yv)) throw DomainError("H_n(z) overflows double precision");
    return {seq.j(n).value(), yv};
}

/// H_0^(1)(z) and H_1^(1)(z) from a single recurrence pass.
struct Hankel01 {
    cplx h0;
    cplx h1;
};

inline Hankel01 hankel01(double z) {
    detail::check_finite(z);
    if (z <= 0.0) throw DomainError("H_n requires z > 0");
    const detail::MillerResult mr = detail::miller(1, z);
    return {{mr.j[0].value(), mr.y0}, {mr.j[1].value(), mr.y1}};
}

/// ln|J_n(z)|, -inf when J_n(z) = 0.
inline double log_abs_bessel_j(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    const int an = std::abs(n);
    if (z == 0.0) return an == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    return CylinderSeq(an, std::abs(z), false).j(an).log_abs();
}

/// ln|Y_n(z)| for z > 0, finite even where Y_n itself overflows.
inline double log_abs_bessel_y(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (z <= 0.0) throw DomainError("Y_n requires z > 0");
    const int an = std::abs(n);
    return CylinderSeq(an, z, true).y(an).log_abs();
}

/// ln Gamma(x) for x > 0.
inline double ln_gamma(double x) {
    detail::check_finite(x);
    if (x <= 0.0) throw DomainError("ln_gamma requires x > 0");
    return std::lgamma(x);
}

/// ln C_n(z) with C_n(z) = -Y_n(z) (z/2)^n pi / Gamma(n); valid when C_n > 0,
/// which holds for n >= z + 1.
inline double log_cap_c(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (n < 1) throw DomainError("C_n requires n >= 1");
    if (z <= 0.0) throw DomainError("C_n requires z > 0");
    const CylinderSeq seq(n, z, true);
    if (seq.y(n).sign() >= 0) throw DomainError("C_n(z) is not positive for this (n, z)");
    return seq.y(n).log_abs() + n * std::log(z / 2.0) + std::log(std::numbers::pi) -
           std::lgamma(static_cast<double>(n));
}

/// C_n(z) = -Y_n(z) (z/2)^n pi / Gamma(n), n >= 1, z > 0.
inline double cap_c(int n, double z) {
    detail::check_finite(z);
    detail::check_order(n);
    if (n < 1) throw DomainError("C_n requires n >= 1");
    if (z <= 0.0) throw DomainError("C_n requires z > 0");
    const CylinderSeq seq(n, z, true);
    const Scaled yn = seq.y(n);
    const double l = yn.log_abs() + n * std::log(z / 2.0) + std::log(std::numbers::pi) -
                     std::lgamma(static_cast<double>(n));
    return -yn.sign() * std::exp(l);
}

}  // namespace hfmm
