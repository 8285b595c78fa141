#pragma once

#include <cmath>
#include <complex>

namespace hfmm {

using cplx = std::complex<double>;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2() = default;
    constexpr Vec2(double x_, double y_) : x(x_), y(y_) {}

    constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2 operator-() const { return {-x, -y}; }
    constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
    constexpr bool operator==(const Vec2&) const = default;

    double norm() const { return std::hypot(x, y); }
    /// Planar argument in (-pi, pi].
    double angle() const { return std::atan2(y, x); }
    constexpr double dot(Vec2 o) const { return x * o.x + y * o.y; }
};

inline constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }

/// e^{i n theta}
inline cplx cis(double theta) { return {std::cos(theta), std::sin(theta)}; }

}  // namespace hfmm
