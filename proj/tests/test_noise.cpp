// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "msldp/noise.hpp"
#include "msldp/parallel.hpp"

using namespace msldp;

TEST(Wiener, VarianceAndIndependence) {
    const NoiseTruncation trunc(Grid(8, 1.0), 3);
    Stream s = SeedSpec{7}.stream(0);
    const double dt = 0.01;
    const std::size_t n = 100000;
    const auto inc = wiener_increments(trunc, dt, n, s);
    ASSERT_EQ(inc.size(), n);
    double var[3] = {0, 0, 0}, cross = 0.0, lag = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ASSERT_EQ(inc[i].size(), 3u);
        for (int k = 0; k < 3; ++k) var[k] += inc[i][k] * inc[i][k];
        cross += inc[i][0] * inc[i][1];
        if (i > 0) lag += inc[i][0] * inc[i - 1][0];
        mean += inc[i][2];
    }
    for (double v : var) EXPECT_NEAR(v / n / dt, 1.0, 0.03);
    EXPECT_LT(std::abs(cross / n / dt), 0.02);
    EXPECT_LT(std::abs(lag / n / dt), 0.02);
    EXPECT_LT(std::abs(mean / n / std::sqrt(dt)), 0.02);
}

TEST(Wiener, Validation) {
    EXPECT_THROW(NoiseTruncation(Grid(4, 1.0), 0), Error);
    EXPECT_THROW(NoiseTruncation(Grid(4, 1.0), 5), Error);
    Stream s(1);
    EXPECT_THROW(wiener_increments(NoiseTruncation(Grid(4, 1.0), 2), 0.0, 3, s), Error);
}

TEST(Seeds, StreamsAreReproducibleAndDistinct) {
    const SeedSpec seed{20261015};
    Stream a = seed.stream(3, purpose::trajectory), b = seed.stream(3, purpose::trajectory);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
    Stream c = seed.stream(3, purpose::frozen), d = seed.stream(4, purpose::trajectory), e = SeedSpec{1}.stream(3);
    const double x = seed.stream(3).normal();
    EXPECT_NE(x, c.normal());
    EXPECT_NE(x, d.normal());
    EXPECT_NE(x, e.normal());
}

TEST(Seeds, ParallelMapIsThreadCountInvariant) {
    const SeedSpec seed{99};
    auto draw = [&](std::size_t i) {
        Stream s = seed.stream(i);
        double acc = 0.0;
        for (int k = 0; k < 1000; ++k) acc += s.normal();
        return acc;
    };
    const auto one = parallel_map(64, 1, draw);
    const auto four = parallel_map(64, 4, draw);
    EXPECT_EQ(one, four);
}

TEST(Seeds, ParallelMapPropagatesExceptions) {
    EXPECT_THROW(parallel_map(8, 2,
                              [](std::size_t i) -> int {
                                  if (i == 5) throw Error("boom");
                                  return 0;
                              }),
                 Error);
}

TEST(Control, EnergyOfConstantControl) {
    // phi = c on [0, T] in one direction: energy c^2 T / 2.
    for (double c : {0.0, 0.5, 2.0}) {
        auto phi = ControlPath::uniform(1.5, 7, 2);
        for (std::size_t j = 0; j < phi.segments(); ++j) phi.coeff(j, 0) = c;
        EXPECT_NEAR(control_energy(phi), 0.5 * c * c * 1.5, 1e-13);
    }
}

TEST(Control, EnergyOfNonUniformSegments) {
    ControlPath phi({0.0, 0.1, 0.4, 1.0}, 2, {1.0, 0.0, 0.0, 2.0, 3.0, 4.0});
    EXPECT_NEAR(phi.squared_l2(), 0.1 * 1.0 + 0.3 * 4.0 + 0.6 * 25.0, 1e-14);
    EXPECT_EQ(phi.segment_at(0.0), 0u);
    EXPECT_EQ(phi.segment_at(0.1), 1u);
    EXPECT_EQ(phi.segment_at(1.0), 2u);
    EXPECT_EQ(phi.at(0.5)[1], 4.0);
}

TEST(Control, ProjectionOntoBall) {
    auto phi = ControlPath::uniform(1.0, 4, 1);
    for (std::size_t j = 0; j < 4; ++j) phi.coeff(j, 0) = 2.0;
    // ||phi||^2 = 4; M = 1 halves the amplitude.
    const auto p = project_to_ball(phi, 1.0);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p.coeff(j, 0), 1.0, 1e-15);
    const auto pp = project_to_ball(p, 1.0);
    EXPECT_EQ(pp.flat(), p.flat());
    const auto inside = project_to_ball(phi, 10.0);
    EXPECT_EQ(inside.flat(), phi.flat());
    EXPECT_THROW(project_to_ball(phi, 0.0), Error);
}

TEST(Control, CsvRoundTrip) {
    ControlPath phi({0.0, 0.25, 1.0}, 2, {0.1, -0.2, 1.0 / 3.0, 7.0});
    std::stringstream ss;
    phi.write_csv(ss);
    const auto back = ControlPath::read_csv(ss);
    EXPECT_EQ(back.times(), phi.times());
    EXPECT_EQ(back.flat(), phi.flat());
}

TEST(Control, CsvErrorsCarryLine) {
    std::stringstream ss("t,c1\n0,1\n0.5,abc\n1,0\n");
    try {
        (void)ControlPath::read_csv(ss);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 3);
    }
}

TEST(Control, Validation) {
    EXPECT_THROW(ControlPath({0.0}, 1), Error);
    EXPECT_THROW(ControlPath({0.1, 1.0}, 1), Error);
    EXPECT_THROW(ControlPath({0.0, 1.0, 1.0}, 1), Error);
    EXPECT_THROW(ControlPath({0.0, 1.0}, 0), Error);
    EXPECT_THROW(ControlPath({0.0, 1.0}, 1, {NAN}), Error);
    EXPECT_THROW(ControlPath::uniform(1.0, 0, 1), Error);
}
