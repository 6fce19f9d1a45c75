// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Discrete Gelfand triples on a uniform 1D Dirichlet grid.
//
// Elements of V, H and V* are all stored as nodal values on the interior
// nodes of (0, L); boundary values are zero and never stored. H is either
// the discrete L2 space or, for porous-media type operators, the discrete
// H^{-1} space built on the sine eigenbasis of the discrete Laplacian.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "msldp/error.hpp"

namespace msldp {

class Grid {
public:
    Grid(int n_interior, double length) : n_(n_interior), length_(length) {
        if (n_interior < 1) throw Error("Grid: n_interior must be >= 1");
        if (!(length > 0.0) || !std::isfinite(length)) throw Error("Grid: length must be positive");
        h_ = length_ / static_cast<double>(n_ + 1);
    }

    /// Grid whose discrete Dirichlet Laplacian has first eigenvalue `lambda1`.
    static Grid with_first_eigenvalue(int n_interior, double lambda1) {
        if (!(lambda1 > 0.0)) throw Error("Grid: first eigenvalue must be positive");
        const double m = static_cast<double>(n_interior + 1);
        return Grid(n_interior, 2.0 * m * std::sin(std::numbers::pi / (2.0 * m)) / std::sqrt(lambda1));
    }

    int n() const noexcept { return n_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(n_); }
    double length() const noexcept { return length_; }
    double h() const noexcept { return h_; }
    double node(int i) const noexcept { return (i + 1) * h_; }

    friend bool operator==(const Grid& a, const Grid& b) noexcept {
        return a.n_ == b.n_ && a.length_ == b.length_;
    }

private:
    int n_;
    double length_;
    double h_;
};

/// Real function on the interior nodes of a Grid.
class GridFunction {
public:
    explicit GridFunction(const Grid& grid) : grid_(grid), values_(grid.size(), 0.0) {}
    GridFunction(const Grid& grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size()) throw GridMismatch("GridFunction: value count does not match grid");
    }

    const Grid& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const std::vector<double>& vec() const noexcept { return values_; }

    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }

    bool all_finite() const noexcept {
        return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
    }

    GridFunction& operator+=(const GridFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    GridFunction& operator-=(const GridFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    GridFunction& operator*=(double s) noexcept {
        for (double& x : values_) x *= s;
        return *this;
    }
    /// this += s * o
    GridFunction& axpy(double s, const GridFunction& o) {
        check_same(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * o.values_[i];
        return *this;
    }

    friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
    friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
    friend GridFunction operator*(double s, GridFunction a) { return a *= s; }

    void check_same(const GridFunction& o) const {
        if (!(grid_ == o.grid_)) throw GridMismatch("grid functions live on different grids");
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

inline void require_same_grid(const GridFunction& u, const GridFunction& v) { u.check_same(v); }

/// Discrete L2 inner product h * sum u_i v_i.
inline double inner_h(const GridFunction& u, const GridFunction& v) {
    require_same_grid(u, v);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return u.grid().h() * s;
}

inline double norm_h(const GridFunction& u) { return std::sqrt(inner_h(u, u)); }

/// Forward differences (u_{i+1} - u_i)/h with zero Dirichlet padding: n+1 values.
inline std::vector<double> forward_diff(const GridFunction& u) {
    const std::size_t n = u.size();
    const double inv_h = 1.0 / u.grid().h();
    std::vector<double> d(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        const double right = j < n ? u[j] : 0.0;
        const double left = j > 0 ? u[j - 1] : 0.0;
        d[j] = (right - left) * inv_h;
    }
    return d;
}

/// Negative adjoint of forward_diff: maps n+1 edge values g to (g_i - g_{i-1})/h on the nodes.
inline GridFunction edge_divergence(const Grid& grid, std::span<const double> g) {
    GridFunction out(grid);
    const double inv_h = 1.0 / grid.h();
    for (std::size_t i = 0; i < grid.size(); ++i) out[i] = (g[i + 1] - g[i]) * inv_h;
    return out;
}

/// Central differences (u_{i+1} - u_{i-1}) / 2h with zero padding.
inline GridFunction central_diff(const GridFunction& u) {
    const std::size_t n = u.size();
    GridFunction out(u.grid());
    const double c = 0.5 / u.grid().h();
    for (std::size_t i = 0; i < n; ++i) {
        const double right = i + 1 < n ? u[i + 1] : 0.0;
        const double left = i > 0 ? u[i - 1] : 0.0;
        out[i] = (right - left) * c;
    }
    return out;
}

/// Three-point Dirichlet Laplacian.
inline GridFunction laplacian(const GridFunction& u) {
    const std::size_t n = u.size();
    GridFunction out(u.grid());
    const double inv_h2 = 1.0 / (u.grid().h() * u.grid().h());
    for (std::size_t i = 0; i < n; ++i) {
        const double right = i + 1 < n ? u[i + 1] : 0.0;
        const double left = i > 0 ? u[i - 1] : 0.0;
        out[i] = (left - 2.0 * u[i] + right) * inv_h2;
    }
    return out;
}

/// W^{1,p}_0 norm (h sum |D u|^p)^{1/p} over the n+1 forward differences.
inline double norm_v1(const GridFunction& u, double p) {
    if (!(p >= 1.0)) throw Error("norm_v1: p must be >= 1");
    double s = 0.0;
    for (double d : forward_diff(u)) s += std::pow(std::abs(d), p);
    return std::pow(u.grid().h() * s, 1.0 / p);
}

/// L^p norm (h sum |u|^p)^{1/p}.
inline double norm_lp(const GridFunction& u, double p) {
    if (!(p >= 1.0)) throw Error("norm_lp: p must be >= 1");
    double s = 0.0;
    for (double x : u.values()) s += std::pow(std::abs(x), p);
    return std::pow(u.grid().h() * s, 1.0 / p);
}

/// Orthonormal sine eigenbasis of the discrete Dirichlet Laplacian.
///
/// Mode k (1-based) is sqrt(2/L) sin(k pi x / L) with eigenvalue
/// (4/h^2) sin^2(k pi h / 2L) of -Delta_h.
class SpectralBasis {
public:
    explicit SpectralBasis(const Grid& grid) : grid_(grid), n_(grid.size()) {
        eigenvalues_.resize(n_);
        modes_.resize(n_ * n_);
        const double h = grid.h();
        const double L = grid.length();
        const double amp = std::sqrt(2.0 / L);
        for (std::size_t k = 0; k < n_; ++k) {
            const double kk = static_cast<double>(k + 1);
            const double s = std::sin(kk * std::numbers::pi * h / (2.0 * L));
            eigenvalues_[k] = 4.0 / (h * h) * s * s;
            for (std::size_t i = 0; i < n_; ++i)
                modes_[k * n_ + i] = amp * std::sin(kk * std::numbers::pi * grid.node(static_cast<int>(i)) / L);
        }
    }

    const Grid& grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return n_; }

    /// Eigenvalue of -Delta_h for 0-based mode index k.
    double eigenvalue(std::size_t k) const { return eigenvalues_.at(k); }
    std::span<const double> eigenvalues() const noexcept { return eigenvalues_; }

    /// Nodal values of 0-based mode k.
    std::span<const double> mode(std::size_t k) const { return {modes_.data() + k * n_, n_}; }

    GridFunction mode_function(std::size_t k) const {
        auto m = mode(k);
        return GridFunction(grid_, std::vector<double>(m.begin(), m.end()));
    }

    /// Coefficients c_k = <u, e_k>_h.
    std::vector<double> coefficients(const GridFunction& u) const {
        check(u);
        std::vector<double> c(n_, 0.0);
        const double h = grid_.h();
        for (std::size_t k = 0; k < n_; ++k) {
            const double* m = modes_.data() + k * n_;
            double s = 0.0;
            for (std::size_t i = 0; i < n_; ++i) s += m[i] * u[i];
            c[k] = h * s;
        }
        return c;
    }

    /// Sum_k c_k e_k; `c` may be shorter than the basis (trailing modes zero).
    GridFunction synthesize(std::span<const double> c) const {
        GridFunction u(grid_);
        const std::size_t m = std::min(c.size(), n_);
        for (std::size_t k = 0; k < m; ++k) {
            if (c[k] == 0.0) continue;
            const double* e = modes_.data() + k * n_;
            for (std::size_t i = 0; i < n_; ++i) u[i] += c[k] * e[i];
        }
        return u;
    }

    /// Apply a mode-diagonal multiplier: sum_k f(lambda_k) <u,e_k> e_k.
    template <class Multiplier>
    GridFunction apply_diagonal(const GridFunction& u, Multiplier&& f) const {
        auto c = coefficients(u);
        for (std::size_t k = 0; k < n_; ++k) c[k] *= f(eigenvalues_[k]);
        return synthesize(c);
    }

    void check(const GridFunction& u) const {
        if (!(u.grid() == grid_)) throw GridMismatch("SpectralBasis: grid mismatch");
    }

private:
    Grid grid_;
    std::size_t n_;
    std::vector<double> eigenvalues_;
    std::vector<double> modes_;  // row-major: mode k occupies [k*n, (k+1)*n)
};

/// Discrete H^{-1} inner product sum_k u_k v_k / lambda_k.
inline double inner_h_minus1(const GridFunction& u, const GridFunction& v, const SpectralBasis& basis) {
    require_same_grid(u, v);
    basis.check(u);
    const auto cu = basis.coefficients(u);
    const auto cv = basis.coefficients(v);
    double s = 0.0;
    for (std::size_t k = 0; k < cu.size(); ++k) s += cu[k] * cv[k] / basis.eigenvalue(k);
    return s;
}

/// The pivot space H in a Gelfand triple.
enum class Pivot { L2, HMinus1 };

/// How the reflexive space V is normed.
enum class VNormKind {
    Gradient,  ///< W^{1,p}_0 seminorm through forward differences
    Lebesgue,  ///< L^p
};

/// Norm bundle of one slow (or fast) Gelfand triple.
struct TripleNorms {
    Pivot pivot = Pivot::L2;
    VNormKind v_kind = VNormKind::Gradient;
    double v_exponent = 2.0;

    double inner(const GridFunction& u, const GridFunction& v, const SpectralBasis& basis) const {
        return pivot == Pivot::L2 ? inner_h(u, v) : inner_h_minus1(u, v, basis);
    }
    double norm_h(const GridFunction& u, const SpectralBasis& basis) const {
        return std::sqrt(std::max(0.0, inner(u, u, basis)));
    }
    double norm_v(const GridFunction& u) const {
        return v_kind == VNormKind::Gradient ? norm_v1(u, v_exponent) : norm_lp(u, v_exponent);
    }
};

/// Which parts of the path metric are active.
enum class MetricChoice {
    Full,   ///< sup_t ||.||_H + (int ||.||_V^gamma)^{1/gamma}
    COnly,  ///< sup_t ||.||_H only
};

/// Time-indexed slow path (the slow part of a trajectory or a skeleton solution).
struct SlowPath {
    std::vector<double> times;
    std::vector<GridFunction> states;

    std::size_t size() const noexcept { return times.size(); }
    double horizon() const { return times.empty() ? 0.0 : times.back() - times.front(); }
};

/// sup_t ||f_t - g_t||_H + (sum_j dt_j ||f_j - g_j||_V^gamma)^{1/gamma}, left-endpoint rule.
inline double path_metric(const SlowPath& f, const SlowPath& g, double gamma1, const TripleNorms& norms,
                          const SpectralBasis& basis, MetricChoice choice = MetricChoice::Full) {
    if (f.size() != g.size() || f.size() == 0) throw GridMismatch("path_metric: paths have different lengths");
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (std::abs(f.times[j] - g.times[j]) > 1e-12 * (1.0 + std::abs(f.times[j])))
            throw GridMismatch("path_metric: time grids differ");
        require_same_grid(f.states[j], g.states[j]);
    }
    if (!(gamma1 > 1.0) && choice == MetricChoice::Full) throw Error("path_metric: gamma1 must exceed 1");
    double sup_h = 0.0;
    double integral = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
        const GridFunction d = f.states[j] - g.states[j];
        sup_h = std::max(sup_h, norms.norm_h(d, basis));
        if (choice == MetricChoice::Full && j + 1 < f.size())
            integral += (f.times[j + 1] - f.times[j]) * std::pow(norms.norm_v(d), gamma1);
    }
    if (choice == MetricChoice::COnly) return sup_h;
    return sup_h + std::pow(integral, 1.0 / gamma1);
}

}  // namespace msldp
