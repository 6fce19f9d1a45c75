// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "msldp/space.hpp"
#include "test_support.hpp"

using namespace msldp;
using msldp::testing::random_gf;

TEST(Grid, SpacingAndNodes) {
    Grid g(3, 1.0);
    EXPECT_DOUBLE_EQ(g.h(), 0.25);
    EXPECT_DOUBLE_EQ(g.node(0), 0.25);
    EXPECT_DOUBLE_EQ(g.node(2), 0.75);
    EXPECT_THROW(Grid(0, 1.0), Error);
    EXPECT_THROW(Grid(4, -1.0), Error);
}

TEST(Grid, PrescribedFirstEigenvalue) {
    for (int n : {1, 4, 16}) {
        const Grid g = Grid::with_first_eigenvalue(n, 2.5);
        SpectralBasis b(g);
        EXPECT_NEAR(b.eigenvalue(0), 2.5, 1e-12) << n;
    }
}

TEST(Space, InnerProductOfConstants) {
    // h * sum u_i v_i with h = 1/(n+1).
    Grid g(4, 1.0);
    GridFunction u(g, {1, 1, 1, 1}), v(g, {2, 2, 2, 2});
    EXPECT_NEAR(inner_h(u, v), 0.2 * 8.0, 1e-15);
    EXPECT_NEAR(inner_h(u, GridFunction(g)), 0.0, 0.0);
}

TEST(Space, InnerProductHandValues) {
    Grid g(3, 1.0);
    GridFunction ones(g, {1, 1, 1});
    EXPECT_DOUBLE_EQ(inner_h(ones, ones), 0.75);
    EXPECT_EQ(inner_h(GridFunction(g), GridFunction(g)), 0.0);
}

TEST(Space, InnerProductMatchesBruteForce) {
    std::mt19937_64 rng(11);
    Grid g(17, 1.7);
    auto u = random_gf(g, rng), v = random_gf(g, rng);
    long double s = 0.0L;
    for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<long double>(u[i]) * v[i];
    EXPECT_NEAR(inner_h(u, v), static_cast<double>(s * g.h()), 1e-14);
}

TEST(Space, InnerProductSymmetricAndBilinear) {
    std::mt19937_64 rng(1);
    Grid g(10, 2.0);
    for (int i = 0; i < 20; ++i) {
        auto u = random_gf(g, rng), v = random_gf(g, rng), w = random_gf(g, rng);
        EXPECT_NEAR(inner_h(u, v), inner_h(v, u), 1e-14);
        GridFunction s = u;
        s.axpy(3.0, w);
        EXPECT_NEAR(inner_h(s, v), inner_h(u, v) + 3.0 * inner_h(w, v), 1e-12);
        EXPECT_GE(inner_h(u, u), 0.0);
    }
}

TEST(Space, GridMismatchIsAnError) {
    GridFunction u(Grid(4, 1.0)), v(Grid(5, 1.0)), w(Grid(4, 2.0));
    EXPECT_THROW(inner_h(u, v), GridMismatch);
    EXPECT_THROW(inner_h(u, w), GridMismatch);
    EXPECT_THROW(u += v, GridMismatch);
    EXPECT_THROW(GridFunction(Grid(4, 1.0), {1.0, 2.0}), GridMismatch);
}

TEST(Space, GradientNormHandExample) {
    // One node, u = 1: edge differences 1/h and -1/h.
    Grid g(1, 1.0);
    GridFunction u(g, {1.0});
    const double h = 0.5;
    EXPECT_NEAR(norm_v1(u, 2.0), 2.0, 1e-14);
    EXPECT_NEAR(norm_v1(u, 2.0), std::sqrt(h * 2.0 / (h * h)), 1e-14);
    EXPECT_NEAR(norm_v1(u, 3.0), std::cbrt(h * 2.0 / (h * h * h)), 1e-13);
    EXPECT_THROW(norm_v1(u, 0.5), Error);
}

TEST(Space, GradientNormOfZeroAndHomogeneity) {
    std::mt19937_64 rng(2);
    Grid g(12, 1.0);
    EXPECT_EQ(norm_v1(GridFunction(g), 2.5), 0.0);
    auto u = random_gf(g, rng);
    GridFunction v = u;
    v *= -3.0;
    EXPECT_NEAR(norm_v1(v, 2.5), 3.0 * norm_v1(u, 2.5), 1e-12);
}

TEST(Space, SummationByPartsGivesDirichletEnergy) {
    // -<Delta_h u, u>_h = ||D u||^2.
    std::mt19937_64 rng(3);
    Grid g(9, 1.0);
    auto u = random_gf(g, rng);
    const double n = norm_v1(u, 2.0);
    EXPECT_NEAR(-inner_h(laplacian(u), u), n * n, 1e-10 * n * n);
}

TEST(SpectralBasis, OrthonormalEigenvectors) {
    Grid g(7, 1.3);
    SpectralBasis b(g);
    for (std::size_t j = 0; j < b.size(); ++j) {
        const GridFunction ej = b.mode_function(j);
        GridFunction lap = laplacian(ej);
        for (std::size_t i = 0; i < ej.size(); ++i) EXPECT_NEAR(lap[i], -b.eigenvalue(j) * ej[i], 1e-9);
        for (std::size_t k = 0; k < b.size(); ++k)
            EXPECT_NEAR(inner_h(ej, b.mode_function(k)), j == k ? 1.0 : 0.0, 1e-12);
    }
    EXPECT_NEAR(b.eigenvalue(0), std::pow(std::numbers::pi / 1.3, 2), 0.1);
}

TEST(SpectralBasis, CoefficientRoundTrip) {
    std::mt19937_64 rng(4);
    Grid g(11, 1.0);
    SpectralBasis b(g);
    auto u = random_gf(g, rng);
    auto c = b.coefficients(u);
    auto v = b.synthesize(c);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], v[i], 1e-12);
}

TEST(Space, HMinus1OfModes) {
    Grid g(6, 1.0);
    SpectralBasis b(g);
    for (std::size_t k = 0; k < b.size(); ++k) {
        auto e = b.mode_function(k);
        EXPECT_NEAR(inner_h_minus1(e, e, b), 1.0 / b.eigenvalue(k), 1e-12);
        if (k > 0) {
            EXPECT_NEAR(inner_h_minus1(e, b.mode_function(0), b), 0.0, 1e-13);
        }
    }
}

TEST(Space, HMinus1MatchesInverseLaplacian) {
    // <u, v>_{-1} = <(-Delta_h)^{-1} u, v>_h.
    std::mt19937_64 rng(5);
    Grid g(8, 1.0);
    SpectralBasis b(g);
    auto u = random_gf(g, rng), v = random_gf(g, rng);
    auto inv = b.apply_diagonal(u, [](double lam) { return 1.0 / lam; });
    EXPECT_NEAR(inner_h_minus1(u, v, b), inner_h(inv, v), 1e-12);
    GridFunction other(Grid(8, 2.0));
    EXPECT_THROW(inner_h_minus1(u, other, b), GridMismatch);
}

TEST(Space, HMinus1MatchesTridiagonalSolve) {
    // Solve -Delta_h w = v with the Thomas algorithm, then <u, w>_h.
    std::mt19937_64 rng(12);
    Grid g(13, 1.0);
    SpectralBasis b(g);
    for (int trial = 0; trial < 10; ++trial) {
        auto u = random_gf(g, rng), v = random_gf(g, rng);
        const std::size_t n = g.size();
        const double d = 2.0 / (g.h() * g.h()), o = -1.0 / (g.h() * g.h());
        std::vector<double> cp(n), dp(n), w(n);
        cp[0] = o / d;
        dp[0] = v[0] / d;
        for (std::size_t i = 1; i < n; ++i) {
            const double m = d - o * cp[i - 1];
            cp[i] = o / m;
            dp[i] = (v[i] - o * dp[i - 1]) / m;
        }
        w[n - 1] = dp[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) w[i] = dp[i] - cp[i] * w[i + 1];
        EXPECT_NEAR(inner_h_minus1(u, v, b), inner_h(u, GridFunction(g, w)), 1e-10);
    }
}

TEST(Space, HMinus1PositiveDefinite) {
    std::mt19937_64 rng(13);
    Grid g(9, 1.0);
    SpectralBasis b(g);
    EXPECT_EQ(inner_h_minus1(GridFunction(g), GridFunction(g), b), 0.0);
    for (int i = 0; i < 100; ++i) {
        auto u = random_gf(g, rng);
        EXPECT_GT(inner_h_minus1(u, u, b), 0.0);
    }
}

TEST(SpectralBasis, EigenvaluesIncreasing) {
    SpectralBasis b(Grid(20, 1.0));
    EXPECT_GT(b.eigenvalue(0), 0.0);
    for (std::size_t k = 1; k < b.size(); ++k) EXPECT_GT(b.eigenvalue(k), b.eigenvalue(k - 1));
}

namespace {
SlowPath random_path(const Grid& g, std::mt19937_64& rng, std::size_t n) {
    SlowPath p;
    for (std::size_t j = 0; j < n; ++j) {
        p.times.push_back(0.1 * static_cast<double>(j));
        p.states.push_back(random_gf(g, rng));
    }
    return p;
}
}  // namespace

TEST(PathMetric, IdentityAndSymmetry) {
    std::mt19937_64 rng(6);
    Grid g(6, 1.0);
    SpectralBasis b(g);
    const TripleNorms n{Pivot::L2, VNormKind::Gradient, 2.0};
    auto f = random_path(g, rng, 11), h = random_path(g, rng, 11);
    EXPECT_EQ(path_metric(f, f, 2.0, n, b), 0.0);
    EXPECT_NEAR(path_metric(f, h, 2.0, n, b), path_metric(h, f, 2.0, n, b), 1e-12);
}

TEST(PathMetric, TriangleInequality) {
    std::mt19937_64 rng(7);
    Grid g(6, 1.0);
    SpectralBasis b(g);
    for (Pivot pv : {Pivot::L2, Pivot::HMinus1}) {
        const TripleNorms n{pv, VNormKind::Lebesgue, 3.0};
        for (int i = 0; i < 20; ++i) {
            auto f = random_path(g, rng, 6), h = random_path(g, rng, 6), k = random_path(g, rng, 6);
            EXPECT_LE(path_metric(f, k, 3.0, n, b), path_metric(f, h, 3.0, n, b) + path_metric(h, k, 3.0, n, b) + 1e-12);
        }
    }
}

TEST(PathMetric, ConstantOffsetClosedForm) {
    // f - g = c * e_1 at every time: sup part c, integral part (T c^gamma ||e_1||_V^gamma)^{1/gamma}.
    Grid g(5, 1.0);
    SpectralBasis b(g);
    const TripleNorms n{Pivot::L2, VNormKind::Gradient, 2.0};
    SlowPath f, h;
    for (int j = 0; j <= 10; ++j) {
        f.times.push_back(0.1 * j);
        h.times.push_back(0.1 * j);
        GridFunction e = b.mode_function(0);
        e *= 0.5;
        f.states.push_back(e);
        h.states.push_back(GridFunction(g));
    }
    const double v = norm_v1(b.mode_function(0), 2.0);
    EXPECT_NEAR(path_metric(f, h, 2.0, n, b), 0.5 + std::sqrt(1.0 * 0.25 * v * v), 1e-12);
    EXPECT_NEAR(path_metric(f, h, 2.0, n, b, MetricChoice::COnly), 0.5, 1e-12);
}

TEST(PathMetric, MismatchedTimeGrids) {
    std::mt19937_64 rng(8);
    Grid g(4, 1.0);
    SpectralBasis b(g);
    const TripleNorms n{};
    auto f = random_path(g, rng, 5), h = random_path(g, rng, 6);
    EXPECT_THROW(path_metric(f, h, 2.0, n, b), GridMismatch);
    auto k = random_path(g, rng, 5);
    k.times[2] += 0.01;
    EXPECT_THROW(path_metric(f, k, 2.0, n, b), GridMismatch);
}
