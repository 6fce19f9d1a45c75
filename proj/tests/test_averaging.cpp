// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "msldp/averaging.hpp"
#include "test_support.hpp"

using namespace msldp;
using msldp::testing::constant_noise;
using msldp::testing::linear_model;
using msldp::testing::random_gf;

namespace {

ModelSpec reaction_model(double c_fast) {
    return ModelSpec(Grid(6, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{0.0, c_fast}),
                     FastDrift(ReactionDiffusion{1.0, 1.0, 1.0, 1.0}), constant_noise({1.0}, {1.0, 0.5}));
}

}  // namespace

TEST(Frozen, NoiselessRelaxationIsImplicitEuler) {
    const double lambda2 = 2.0, b = 3.0, h = 0.01;
    const ModelSpec m = linear_model(4, 1.0, {1.0}, {0.0}, lambda2, b);
    GridFunction x(m.grid, {1.0, -1.0, 0.5, 0.0}), y0(m.grid, {0.0, 2.0, 0.0, -1.0});
    Stream st(1);
    const SlowPath p = solve_frozen(m, x, y0, 1.0, h, st, 10);
    ASSERT_EQ(p.size(), 11u);
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double q = std::pow(1.0 + lambda2 * h, -10.0 * static_cast<double>(j));
        for (std::size_t i = 0; i < 4; ++i) {
            const double target = b * x[i] / lambda2;
            EXPECT_NEAR(p.states[j][i], target + (y0[i] - target) * q, 1e-12);
        }
    }
}

TEST(Frozen, StationaryVarianceOfOrnsteinUhlenbeck) {
    // y_{n+1} = q (y_n + sigma dW), q = 1/(1 + lambda2 h): stationary variance q^2 sigma^2 h / (1 - q^2).
    const double lambda2 = 1.0, sigma = 0.7, h = 0.05;
    const ModelSpec m = linear_model(4, 1.0, {1.0}, {sigma}, lambda2, 0.0);
    Stream st(17);
    const GridFunction zero(m.grid);
    const SlowPath p = solve_frozen(m, zero, zero, 4000.0, h, st);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t j = p.size() / 100; j < p.size(); ++j, ++n) {
        const double c = m.basis->coefficients(p.states[j])[0];
        acc += c * c;
    }
    const double q = 1.0 / (1.0 + lambda2 * h);
    const double expected = q * q * sigma * sigma * h / (1.0 - q * q);
    EXPECT_NEAR(acc / static_cast<double>(n), expected, 0.1 * expected);
}

TEST(ErgodicRate, OrnsteinUhlenbeckDecaysAtLambda) {
    const ModelSpec m = linear_model(4, 1.0, {1.0}, {1.0, 0.5}, 1.0, 1.0);
    const GridFunction x(m.grid);
    GridFunction y0(m.grid);
    const auto e1 = m.basis->mode_function(0);
    y0.axpy(3.0, e1);
    ErgodicRateSettings s;
    s.replicas = 100;
    s.seed = 5;
    const auto fit = measure_ergodic_rate(m, x, [&](const GridFunction& y) { return inner_h(y, e1); }, {y0}, s);
    EXPECT_TRUE(fit.decaying);
    EXPECT_GE(fit.points_used, 3u);
    EXPECT_GE(fit.slope, -1.2);
    EXPECT_LE(fit.slope, -0.8);
    EXPECT_NEAR(fit.residual[0][0], 3.0, 6.0 * fit.stderr_[0][0] + 1e-12);
}

TEST(ErgodicRate, Validation) {
    const ModelSpec m = linear_model();
    const GridFunction x(m.grid);
    auto f = [](const GridFunction& y) { return y[0]; };
    EXPECT_THROW(measure_ergodic_rate(m, x, f, {}), Error);
    ErgodicRateSettings s;
    s.replicas = 1;
    EXPECT_THROW(measure_ergodic_rate(m, x, f, {x}, s), Error);
}

TEST(AveragedDrift, AnalyticLinearValue) {
    // lambda2 = 1, b = 2: the invariant mean is 2x and Fbar(x) = c * 2x.
    const double c = 1.5;
    const ModelSpec m = linear_model(4, 1.0, {1.0}, {1.0}, 1.0, 2.0, c);
    const auto drift = AveragedDrift::analytic(m);
    EXPECT_EQ(drift.backend(), DriftBackend::AnalyticLinear);
    GridFunction x(m.grid, {1.0, 0.5, -0.25, 2.0});
    const auto v = drift.evaluate(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(v.mean[i], c * 2.0 * x[i], 1e-14);
    EXPECT_EQ(v.stderr_norm, 0.0);
}

TEST(AveragedDrift, AnalyticMeanSolvesFastEquilibrium) {
    std::mt19937_64 rng(3);
    const ModelSpec m(Grid(10, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{0.0, 1.0}),
                      FastDrift(LinearOU{0.5, 2.0, true}), constant_noise({1.0}, {1.0}));
    const auto drift = AveragedDrift::analytic(m);
    const auto x = random_gf(m.grid, rng);
    const GridFunction ybar = drift(x);
    const auto r = m.fast.apply(x, ybar);
    EXPECT_LT(norm_h(r), 1e-10 * (1.0 + norm_h(x)));
}

TEST(AveragedDrift, ErgodicMonteCarloAgreesWithAnalytic) {
    const ModelSpec m = linear_model(4, 1.0, {1.0}, {1.0, 1.0, 1.0, 1.0}, 1.0, 1.0, 1.0);
    ErgodicMcParams p;
    p.seed = 9;
    const auto mc = AveragedDrift::ergodic_mc(m, p);
    const auto exact = AveragedDrift::analytic(m);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 5; ++i) {
        const auto x = random_gf(m.grid, rng);
        const auto v = mc.evaluate(x);
        EXPECT_GT(v.stderr_norm, 0.0);
        EXPECT_LE(norm_h(v.mean - exact(x)), 3.0 * v.stderr_norm);
    }
}

TEST(AveragedDrift, MemoizationAndCommonRandomNumbers) {
    const ModelSpec m = reaction_model(1.0);
    ErgodicMcParams p;
    p.replicas = 4;
    const auto d = AveragedDrift::automatic(m, p);
    EXPECT_EQ(d.backend(), DriftBackend::ErgodicMC);
    GridFunction x(m.grid);
    const auto a = d.evaluate(x);
    const auto b = d.evaluate(x);
    EXPECT_EQ(d.cache_size(), 1u);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a.mean[i], b.mean[i]);
    // A separate instance with the same seed reproduces the value bit for bit.
    const auto d2 = AveragedDrift::automatic(m, p);
    EXPECT_EQ(d2.evaluate(x).mean[2], a.mean[2]);
    // Under common random numbers a tiny perturbation of x moves the estimate only slightly.
    GridFunction x2 = x;
    x2[0] += 1e-6;
    EXPECT_LT(norm_h(d.evaluate(x2).mean - a.mean), 1e-4);
}

TEST(AveragedDrift, ToleranceIsEnforced) {
    ErgodicMcParams p;
    p.replicas = 2;
    p.tolerance = 1e-9;
    const auto d = AveragedDrift::ergodic_mc(reaction_model(1.0), p);
    EXPECT_THROW(d.evaluate(GridFunction(Grid(6, 1.0))), Error);
}

TEST(AveragedDrift, BackendSelectionAndValidation) {
    EXPECT_THROW(AveragedDrift::analytic(reaction_model(1.0)), Error);
    EXPECT_EQ(AveragedDrift::automatic(reaction_model(0.0)).backend(), DriftBackend::AnalyticLinear);
    EXPECT_EQ(AveragedDrift::automatic(linear_model()).backend(), DriftBackend::AnalyticLinear);
    ErgodicMcParams short_burn;
    short_burn.burn_in = 0.1;
    EXPECT_THROW(AveragedDrift::ergodic_mc(linear_model(), short_burn), Error);
    ErgodicMcParams one;
    one.replicas = 1;
    EXPECT_THROW(AveragedDrift::ergodic_mc(linear_model(), one), Error);
    const auto mc = AveragedDrift::ergodic_mc(reaction_model(1.0), ErgodicMcParams{});
    const GridFunction z(Grid(6, 1.0));
    EXPECT_THROW(mc.jacobian_transpose(z, z), Error);
}

TEST(AveragedDrift, JacobianTransposeMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    const ModelSpec lin(Grid(6, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{0.3, 1.0}),
                        FastDrift(LinearOU{0.5, 2.0, true}), constant_noise({1.0}, {1.0}));
    const ModelSpec sat(Grid(6, 1.0), SlowOperator(PLaplace{}), CouplingF1(BoundedLipschitzCoupling{0.5, 2.0, 0.0}),
                        FastDrift(ReactionDiffusion{1.0, 1.0, 1.0, 1.0}), constant_noise({1.0}, {1.0}));
    for (const ModelSpec* m : {&lin, &sat}) {
        const auto d = AveragedDrift::automatic(*m);
        const auto x = random_gf(m->grid, rng, 0.3), w = random_gf(m->grid, rng);
        const auto jt = d.jacobian_transpose(x, w);
        for (std::size_t i = 0; i < x.size(); ++i) {
            GridFunction up = x, dn = x;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            double fd = 0.0;
            const auto fu = d(up), fn = d(dn);
            for (std::size_t j = 0; j < x.size(); ++j) fd += w[j] * (fu[j] - fn[j]) / 2e-6;
            EXPECT_NEAR(jt[i], fd, 1e-6 * (1.0 + std::abs(fd)));
        }
    }
}

TEST(AveragedDrift, DeclaredLipschitzBoundsDifferenceQuotients) {
    std::mt19937_64 rng(7);
    const ModelSpec m(Grid(8, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{0.5, 1.0}),
                      FastDrift(LinearOU{1.0, 1.5, false}), constant_noise({1.0}, {1.0}));
    const auto d = AveragedDrift::analytic(m);
    const double L = d.declared_lipschitz();
    for (int i = 0; i < 100; ++i) {
        const auto x1 = random_gf(m.grid, rng), x2 = random_gf(m.grid, rng);
        EXPECT_LE(norm_h(d(x1) - d(x2)), L * norm_h(x1 - x2) * (1.0 + 1e-12));
    }
}
