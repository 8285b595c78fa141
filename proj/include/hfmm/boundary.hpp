#pragma once

/// @file
/// Parametric boundary curves and their equidistant discretization into
/// knots y_j = y(t_j), t_j = j pi / N for j = 1 .. 2N.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hfmm/errors.hpp"
#include "hfmm/geometry.hpp"

namespace hfmm {

struct ParametricCurve {
    std::string name;
    std::function<Vec2(double)> position;
    std::function<Vec2(double)> derivative;
};

/// (cos t + 0.65 cos 2t - 0.65, 1.5 sin t)
inline ParametricCurve kite() {
    return {"kite",
            [](double t) { return Vec2{std::cos(t) + 0.65 * std::cos(2 * t) - 0.65, 1.5 * std::sin(t)}; },
            [](double t) { return Vec2{-std::sin(t) - 1.3 * std::sin(2 * t), 1.5 * std::cos(t)}; }};
}

inline ParametricCurve circle(double radius, Vec2 center = {}) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("circle radius must be positive");
    return {"circle:" + std::to_string(radius),
            [=](double t) { return center + Vec2{radius * std::cos(t), radius * std::sin(t)}; },
            [=](double t) { return Vec2{-radius * std::sin(t), radius * std::cos(t)}; }};
}

/// Curve tabulated at increasing t in [0, 2 pi); positions are interpolated by
/// periodic cubic Hermite segments using the tabulated derivatives, and the
/// derivative by the derivative of that interpolant.
inline ParametricCurve tabulated_curve(std::vector<double> t, std::vector<Vec2> pos,
                                       std::vector<Vec2> der, std::string name = "table") {
    const std::size_t n = t.size();
    if (n < 3 || pos.size() != n || der.size() != n) throw ConfigError("curve table needs >= 3 consistent rows");
    for (std::size_t i = 1; i < n; ++i)
        if (!(t[i] > t[i - 1])) throw ConfigError("curve table t column must be strictly increasing");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    if (t.front() < 0.0 || t.back() >= two_pi) throw ConfigError("curve table t must lie in [0, 2 pi)");

    struct Table {
        std::vector<double> t;
        std::vector<Vec2> p, d;
    };
    auto tab = std::make_shared<Table>(Table{std::move(t), std::move(pos), std::move(der)});

    // Returns segment start i, segment length h and local s in [0, 1].
    auto locate = [tab](double tt) {
        const auto& tv = tab->t;
        const std::size_t m = tv.size();
        tt = std::fmod(tt, two_pi);
        if (tt < 0.0) tt += two_pi;
        std::size_t i;
        double t0;
        if (tt < tv.front()) {
            i = m - 1;
            t0 = tv.back() - two_pi;
        } else {
            i = static_cast<std::size_t>(std::upper_bound(tv.begin(), tv.end(), tt) - tv.begin()) - 1;
            t0 = tv[i];
        }
        const std::size_t j = (i + 1) % m;
        const double t1 = (j == 0) ? tv.front() + two_pi : tv[j];
        const double h = t1 - t0;
        return std::tuple{i, j, h, (tt - t0) / h};
    };
    auto position = [tab, locate](double tt) {
        const auto [i, j, h, s] = locate(tt);
        const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
        const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
        return tab->p[i] * h00 + tab->d[i] * (h * h10) + tab->p[j] * h01 + tab->d[j] * (h * h11);
    };
    auto derivative = [tab, locate](double tt) {
        const auto [i, j, h, s] = locate(tt);
        const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
        const double d01 = -6 * s * s + 6 * s, d11 = 3 * s * s - 2 * s;
        return tab->p[i] * (d00 / h) + tab->d[i] * d10 + tab->p[j] * (d01 / h) + tab->d[j] * d11;
    };
    return {std::move(name), position, derivative};
}

/// Reads a CSV with header `t,x1,x2,dx1,dx2`.
inline ParametricCurve read_curve_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open curve file " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty curve file " + path);
    line.erase(std::remove_if(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }),
               line.end());
    if (line != "t,x1,x2,dx1,dx2") throw ConfigError("curve file header must be t,x1,x2,dx1,dx2");
    std::vector<double> t;
    std::vector<Vec2> pos, der;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double v[5];
        for (double& x : v)
            if (!(ss >> x)) throw ConfigError("malformed curve row " + std::to_string(row));
        t.push_back(v[0]);
        pos.push_back({v[1], v[2]});
        der.push_back({v[3], v[4]});
    }
    return tabulated_curve(std::move(t), std::move(pos), std::move(der), path);
}

/// "kite", "circle:R", or a path to a curve CSV.
inline ParametricCurve curve_from_spec(const std::string& spec) {
    if (spec == "kite") return kite();
    if (spec.rfind("circle", 0) == 0) {
        if (spec == "circle") return circle(1.0);
        if (spec.size() < 8 || spec[6] != ':') throw ConfigError("expected circle:R, got " + spec);
        try {
            std::size_t used = 0;
            const double r = std::stod(spec.substr(7), &used);
            if (used != spec.size() - 7) throw ConfigError("bad circle radius in " + spec);
            return circle(r);
        } catch (const std::logic_error&) {
            throw ConfigError("bad circle radius in " + spec);
        }
    }
    return read_curve_csv(spec);
}

struct BoundaryDisc {
    int n_half = 0;              ///< N; there are 2N knots
    std::vector<double> t;       ///< parameters t_j
    std::vector<Vec2> knots;     ///< y_j
    std::vector<double> weight;  ///< s(y_j) = |y'(t_j)|
    std::vector<Vec2> normal;    ///< outward unit normal
    std::vector<cplx> density;   ///< phi(y_j)

    std::size_t size() const { return knots.size(); }
    cplx phi_s(std::size_t j) const { return density[j] * weight[j]; }
};

inline BoundaryDisc discretize(const ParametricCurve& curve, int n_half,
                               const std::function<cplx(double)>& density) {
    if (n_half < 1) throw ConfigError("N must be positive");
    BoundaryDisc d;
    d.n_half = n_half;
    const int count = 2 * n_half;
    d.t.resize(count);
    d.knots.resize(count);
    d.weight.resize(count);
    d.normal.resize(count);
    d.density.resize(count);
    std::vector<Vec2> tangent(count);
    for (int j = 1; j <= count; ++j) {
        const double tj = j * std::numbers::pi / n_half;
        const int i = j - 1;
        d.t[i] = tj;
        d.knots[i] = curve.position(tj);
        tangent[i] = curve.derivative(tj);
        d.weight[i] = tangent[i].norm();
        if (!(d.weight[i] > 0.0) || !std::isfinite(d.weight[i]))
            throw ConfigError("curve tangent vanishes at t = " + std::to_string(tj));
        d.density[i] = density(tj);
    }
    double area2 = 0.0;
    for (int i = 0; i < count; ++i) {
        const Vec2 a = d.knots[i], b = d.knots[(i + 1) % count];
        area2 += a.x * b.y - b.x * a.y;
    }
    const double orient = area2 >= 0.0 ? 1.0 : -1.0;
    for (int i = 0; i < count; ++i)
        d.normal[i] = Vec2{tangent[i].y, -tangent[i].x} * (orient / d.weight[i]);
    return d;
}

inline BoundaryDisc discretize(const ParametricCurve& curve, int n_half) {
    return discretize(curve, n_half, [](double) { return cplx(1.0, 0.0); });
}

/// A = max_j |phi(y_j) s(y_j)|
inline double sup_norm_a(const BoundaryDisc& d) {
    double a = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) a = std::max(a, std::abs(d.phi_s(j)));
    return a;
}

}  // namespace hfmm
