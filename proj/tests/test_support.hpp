// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "msldp/models.hpp"
#include "msldp/space.hpp"

namespace msldp::testing {

inline GridFunction random_gf(const Grid& g, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    GridFunction u(g);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = n(rng);
    return u;
}

inline NoiseMaps constant_noise(std::vector<double> g1, std::vector<double> g2) {
    NoiseMaps nm;
    nm.g1_kind = G1Kind::ConstantDiag;
    nm.g1_sigma = std::move(g1);
    nm.g2_sigma = std::move(g2);
    return nm;
}

/// Heat equation slow part, linear coupling F1 = c_fast y, OU fast part.
inline ModelSpec linear_model(int n = 8, double length = 1.0, std::vector<double> g1 = {1.0, 0.5},
                              std::vector<double> g2 = {1.0, 0.5}, double lambda2 = 1.0, double b = 1.0,
                              double c_fast = 1.0) {
    return ModelSpec(Grid(n, length), SlowOperator(PLaplace{2.0, 2.0, 0.0}), CouplingF1(LinearCoupling{0.0, c_fast}),
                     FastDrift(LinearOU{lambda2, b, false}), constant_noise(std::move(g1), std::move(g2)));
}

/// One node, first eigenvalue lambda: dX = -lambda X dt + sigma dW (slow part decoupled).
inline ModelSpec one_mode_model(double lambda, double sigma) {
    return ModelSpec(Grid::with_first_eigenvalue(1, lambda), SlowOperator(PLaplace{2.0, 2.0, 0.0}),
                     CouplingF1(LinearCoupling{0.0, 0.0}), FastDrift(LinearOU{1.0, 1.0, false}),
                     constant_noise({sigma}, {0.0}));
}

}  // namespace msldp::testing
