// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>

#include "msldp/skeleton.hpp"
#include "test_support.hpp"

using namespace msldp;
using msldp::testing::constant_noise;
using msldp::testing::linear_model;
using msldp::testing::random_gf;

namespace {

SkeletonProblem make_problem(const ModelSpec& m, ControlPath phi, GridFunction x0, double dt) {
    auto drift = std::make_shared<const AveragedDrift>(AveragedDrift::automatic(m));
    return SkeletonProblem(m, drift, std::move(phi), std::move(x0), dt);
}

ControlPath random_control(double T, std::size_t segments, std::size_t K, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    auto phi = ControlPath::uniform(T, segments, K);
    for (double& c : phi.flat()) c = n(rng);
    return phi;
}

GridFunction smooth_bump(const Grid& g, double amplitude = 1.0) {
    GridFunction x(g);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = amplitude * std::sin(M_PI * g.node(i));
    return x;
}

ModelSpec p_laplace_model() {
    return ModelSpec(Grid(8, 1.0), SlowOperator(PLaplace{3.0, 2.0, 0.5}), CouplingF1(LinearCoupling{0.0, 1.0}),
                     FastDrift(LinearOU{1.0, 1.0, false}), constant_noise({1.0, 0.5}, {1.0, 0.5}));
}

}  // namespace

TEST(Skeleton, VariationOfConstantsOnDecoupledLinearModel) {
    // Heat equation with Fbar = 0 and constant G1: each mode solves x' = -lambda_k x + sigma_k phi_k.
    std::mt19937_64 rng(1);
    const ModelSpec m = linear_model(8, 1.0, {1.0, 0.5}, {1.0, 0.5}, 1.0, 1.0, 0.0);
    const auto phi = random_control(1.0, 10, 2, rng);
    const auto x0 = random_gf(m.grid, rng);
    const SlowPath path = solve_skeleton(make_problem(m, phi, x0, 1e-4));
    auto c = m.basis->coefficients(x0);
    const double sigma[2] = {1.0, 0.5};
    for (std::size_t j = 0; j < phi.segments(); ++j) {
        const double tau = phi.segment_length(j);
        for (std::size_t k = 0; k < c.size(); ++k) {
            const double lam = m.basis->eigenvalue(k);
            const double force = k < 2 ? sigma[k] * phi.coeff(j, k) : 0.0;
            c[k] = std::exp(-lam * tau) * c[k] + force * (1.0 - std::exp(-lam * tau)) / lam;
        }
    }
    const GridFunction exact = m.basis->synthesize(c);
    EXPECT_LT(norm_h(path.states.back() - exact), 1e-6);
    EXPECT_NEAR(path.times.back(), 1.0, 1e-12);
}

TEST(Skeleton, ZeroDataGiveZeroPath) {
    const std::vector<SlowOperator> ops{SlowOperator(PLaplace{3.0, 2.0, 0.5}), SlowOperator(PorousMedia{3.0, true}),
                                        SlowOperator(FastDiffusion{0.5}), SlowOperator(Burgers{1.0, {0.5}})};
    for (const auto& op : ops) {
        const ModelSpec m(Grid(8, 1.0), op, CouplingF1(LinearCoupling{0.0, 1.0}), FastDrift(LinearOU{1.0, 1.0, false}),
                          constant_noise({1.0}, {1.0}));
        const SlowPath p = solve_skeleton(make_problem(m, ControlPath::uniform(0.5, 5, 1), GridFunction(m.grid), 1e-3));
        for (const auto& x : p.states) EXPECT_EQ(norm_h(x), 0.0) << op.name();
    }
}

TEST(Skeleton, DeterministicForwardMap) {
    std::mt19937_64 rng(2);
    const ModelSpec m = p_laplace_model();
    const auto templ = make_problem(m, ControlPath::uniform(0.5, 5, 2), random_gf(m.grid, rng), 1e-3);
    const auto phi = random_control(0.5, 5, 2, rng);
    const SlowPath a = solve_forward_map(phi, templ), b = solve_forward_map(phi, templ);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j)
        for (std::size_t i = 0; i < m.grid.size(); ++i) EXPECT_EQ(a.states[j][i], b.states[j][i]);
}

TEST(Skeleton, LinearResponseToTheControl) {
    std::mt19937_64 rng(3);
    const ModelSpec m = linear_model(8, 1.0, {1.0, 0.5}, {1.0, 0.5}, 1.0, 1.0, 1.0);
    const auto templ = make_problem(m, ControlPath::uniform(1.0, 10, 2), GridFunction(m.grid), 1e-3);
    const auto phi1 = random_control(1.0, 10, 2, rng), phi2 = random_control(1.0, 10, 2, rng);
    ControlPath sum = phi1;
    for (std::size_t i = 0; i < sum.flat().size(); ++i) sum.flat()[i] = 2.0 * phi1.flat()[i] - 3.0 * phi2.flat()[i];
    const SlowPath a = solve_forward_map(phi1, templ), b = solve_forward_map(phi2, templ), c = solve_forward_map(sum, templ);
    for (std::size_t j = 0; j < a.size(); ++j) {
        GridFunction expect = a.states[j];
        expect *= 2.0;
        expect.axpy(-3.0, b.states[j]);
        EXPECT_LT(norm_h(c.states[j] - expect), 1e-12 * (1.0 + norm_h(expect)));
    }
}

TEST(Skeleton, ContinuityOfTheForwardMap) {
    std::mt19937_64 rng(4);
    const ModelSpec m = p_laplace_model();
    const auto templ = make_problem(m, ControlPath::uniform(0.5, 10, 2), smooth_bump(m.grid), 1e-3);
    const auto phi = random_control(0.5, 10, 2, rng), dir = random_control(0.5, 10, 2, rng);
    const SlowPath base = solve_forward_map(phi, templ);
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {1.0, 0.1, 0.01, 0.001}) {
        ControlPath q = phi;
        for (std::size_t i = 0; i < q.flat().size(); ++i) q.flat()[i] += s * dir.flat()[i];
        const double d = path_metric(solve_forward_map(q, templ), base, m.slow.gamma1(), m.slow_norms(), *m.basis);
        EXPECT_LT(d, prev);
        prev = d;
    }
    EXPECT_LT(prev, 1e-2);
}

TEST(Skeleton, FixedPointStepIsIndependentOfTheInitialGuess) {
    std::mt19937_64 rng(5);
    const ModelSpec m = p_laplace_model();
    auto p = make_problem(m, ControlPath::uniform(0.5, 5, 2), smooth_bump(m.grid), 1e-4);
    p.step = SkeletonStep::FixedPoint;
    const auto x = smooth_bump(m.grid, 0.8);
    const std::vector<double> phi{0.3, -0.2};
    GridFunction g1 = x, g2 = x;
    g1.axpy(0.05, random_gf(m.grid, rng));
    g2.axpy(-0.05, random_gf(m.grid, rng));
    const GridFunction a = skeleton_step(p, x, phi, &g1), b = skeleton_step(p, x, phi, &g2);
    EXPECT_LT(norm_h(a - b), 1e-12);
    // The fixed-point step agrees with the exponential step to first order in dt.
    auto q = p;
    q.step = SkeletonStep::Exponential;
    EXPECT_LT(norm_h(skeleton_step(q, x, phi) - a), 1e-3 * (1.0 + norm_h(x)));
    // Far too large a step for the contraction: reported, not returned.
    p.dt = 0.1;
    EXPECT_THROW(skeleton_step(p, x, phi), Error);
}

TEST(Skeleton, FirstOrderUnderStepHalving) {
    std::mt19937_64 rng(6);
    const ModelSpec m = p_laplace_model();
    const GridFunction x0 = smooth_bump(m.grid);
    const auto phi = random_control(0.5, 5, 2, rng);
    std::vector<GridFunction> terminal;
    for (double dt : {4e-3, 2e-3, 1e-3}) terminal.push_back(solve_skeleton(make_problem(m, phi, x0, dt)).states.back());
    const double e1 = norm_h(terminal[0] - terminal[1]), e2 = norm_h(terminal[1] - terminal[2]);
    EXPECT_GE(std::log2(e1 / e2), 0.9);
}

TEST(Skeleton, BlowUpReportsItsTime) {
    const ModelSpec m(Grid::with_first_eigenvalue(1, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{40.0, 0.0}),
                      FastDrift(LinearOU{1.0, 1.0, false}), constant_noise({1.0}, {0.0}));
    try {
        (void)solve_skeleton(make_problem(m, ControlPath::uniform(1.0, 1, 1), GridFunction(m.grid, {1.0}), 1e-3));
        FAIL() << "expected BlowUp";
    } catch (const BlowUp& e) {
        // ||x|| grows like e^{39 t}, crossing 1e6 near t = ln(1e6 / ||x0||) / 39.
        EXPECT_NEAR(e.time(), std::log(1e6 / std::sqrt(m.grid.h())) / 39.0, 0.02);
    }
}

TEST(Skeleton, Validation) {
    const ModelSpec m = linear_model();
    const GridFunction x0(m.grid);
    EXPECT_THROW(solve_skeleton(make_problem(m, ControlPath::uniform(1.0, 3, 2), x0, 0.3)), Error);
    EXPECT_THROW(solve_skeleton(make_problem(m, ControlPath::uniform(1.0, 4, 3), x0, 0.01)), Error);
    GridFunction bad(m.grid);
    bad[0] = NAN;
    EXPECT_THROW(solve_skeleton(make_problem(m, ControlPath::uniform(1.0, 4, 2), bad, 0.01)), Error);
    // An MC backend that cannot reach its tolerance is rejected before the time loop.
    const ModelSpec rd(Grid(6, 1.0), SlowOperator(PLaplace{}), CouplingF1(LinearCoupling{0.0, 1.0}),
                       FastDrift(ReactionDiffusion{1.0, 1.0, 1.0, 1.0}), constant_noise({1.0}, {1.0}));
    ErgodicMcParams p;
    p.replicas = 2;
    p.tolerance = 1e-12;
    auto drift = std::make_shared<const AveragedDrift>(AveragedDrift::ergodic_mc(rd, p));
    SkeletonProblem prob(rd, drift, ControlPath::uniform(1.0, 4, 1), GridFunction(rd.grid), 0.01);
    EXPECT_THROW(prob.validate(), Error);
}

TEST(Skeleton, RecordingGrid) {
    const ModelSpec m = linear_model();
    auto p = make_problem(m, ControlPath::uniform(1.0, 4, 2), GridFunction(m.grid), 0.01);
    p.record_stride = 30;
    const SlowPath path = solve_skeleton(p);
    const std::vector<double> expect{0.0, 0.3, 0.6, 0.9, 1.0};
    ASSERT_EQ(path.times.size(), expect.size());
    for (std::size_t j = 0; j < expect.size(); ++j) EXPECT_NEAR(path.times[j], expect[j], 1e-12);
}

TEST(PathEnergy, ConstantPath) {
    const ModelSpec m = p_laplace_model();
    GridFunction x(m.grid);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
    SlowPath p;
    for (int j = 0; j <= 4; ++j) {
        p.times.push_back(0.25 * j);
        p.states.push_back(x);
    }
    const auto n = m.slow_norms();
    const double expect = std::pow(n.norm_h(x, *m.basis), 2.0) + m.constants.theta1 * std::pow(n.norm_v(x), 3.0);
    EXPECT_NEAR(path_energy(p, m), expect, 1e-12 * expect);
}
