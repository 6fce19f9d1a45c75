// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic controlled averaged equation dX = [A(X) + Fbar1(X) + G1(X) phi] dt.

#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "msldp/averaging.hpp"
#include "msldp/error.hpp"
#include "msldp/models.hpp"
#include "msldp/noise.hpp"
#include "msldp/simulate.hpp"
#include "msldp/space.hpp"

namespace msldp {

enum class SkeletonStep {
    Exponential,  ///< linear part integrated exactly, remainder held constant over the step
    FixedPoint,   ///< implicit Euler with the remainder of A also implicit, solved by fixed-point iteration
};

struct SkeletonProblem {
    ModelSpec model;
    std::shared_ptr<const AveragedDrift> drift;
    ControlPath phi;
    GridFunction x0;
    double dt = 1e-3;
    std::size_t record_stride = 1;
    SkeletonStep step = SkeletonStep::Exponential;
    double fixed_point_tol = 1e-14;
    std::size_t fixed_point_max_iter = 500;

    SkeletonProblem(ModelSpec m, std::shared_ptr<const AveragedDrift> d, ControlPath p, GridFunction x, double step_dt)
        : model(std::move(m)), drift(std::move(d)), phi(std::move(p)), x0(std::move(x)), dt(step_dt) {}

    double horizon() const { return phi.horizon(); }
    std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon() / dt)); }

    void validate() const {
        if (!drift) throw Error("skeleton: averaged drift backend is missing");
        if (!(dt > 0.0)) throw Error("skeleton: dt must be positive");
        model.basis->check(x0);
        if (!x0.all_finite()) throw Error("skeleton: x0 must be finite");
        if (phi.modes() != model.modes()) throw Error("skeleton: control has the wrong number of modes");
        for (std::size_t j = 0; j < phi.segments(); ++j) {
            const double r = phi.segment_length(j) / dt;
            if (std::abs(r - std::round(r)) > 1e-6 * std::max(1.0, r) || std::round(r) < 1.0)
                throw Error("skeleton: dt must divide every control segment");
        }
        if (record_stride == 0) throw Error("skeleton: record_stride must be positive");
        // An MC backend that cannot meet its tolerance is rejected here, before the time loop.
        if (drift->backend() == DriftBackend::ErgodicMC) (void)drift->evaluate(x0);
    }
};

/// Right-hand side pieces that are explicit in both step variants.
inline GridFunction skeleton_explicit_terms(const SkeletonProblem& p, const GridFunction& x, std::span<const double> phi) {
    GridFunction r = p.drift->evaluate(x).mean;
    r += p.model.noise.apply_g1(x, phi, *p.model.basis);
    return r;
}

/// One step from x; `guess` seeds the fixed-point iteration when that variant is selected.
inline GridFunction skeleton_step(const SkeletonProblem& p, const GridFunction& x, std::span<const double> phi,
                                  const GridFunction* guess = nullptr) {
    const auto& basis = *p.model.basis;
    const LinearPart lp = p.model.slow.linear_part();
    if (p.step == SkeletonStep::Exponential) {
        GridFunction f = skeleton_explicit_terms(p, x, phi);
        f += slow_remainder(p.model.slow, x);
        GridFunction out = exp_propagate(basis, x, p.dt, lp);
        out.axpy(p.dt, exp_forcing(basis, f, p.dt, lp));
        return out;
    }
    GridFunction base = x;
    base.axpy(p.dt, skeleton_explicit_terms(p, x, phi));
    GridFunction z = guess ? *guess : x;
    for (std::size_t it = 0; it < p.fixed_point_max_iter; ++it) {
        GridFunction r = base;
        r.axpy(p.dt, slow_remainder(p.model.slow, z));
        GridFunction next = implicit_solve(basis, r, p.dt, lp);
        const double change = norm_h(next - z);
        z = std::move(next);
        if (!z.all_finite() || !std::isfinite(change)) break;
        if (change <= p.fixed_point_tol * (1.0 + norm_h(z))) return z;
    }
    throw Error("skeleton: fixed-point iteration did not converge; reduce dt");
}

/// Solves the skeleton equation, returning states every record_stride steps (and at T).
inline SlowPath solve_skeleton(const SkeletonProblem& p) {
    p.validate();
    const std::size_t steps = p.steps();
    const auto norms = p.model.slow_norms();
    SlowPath out;
    GridFunction x = p.x0;
    out.times.push_back(0.0);
    out.states.push_back(x);
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = static_cast<double>(n) * p.dt;
        try {
            x = skeleton_step(p, x, p.phi.at(t + 0.5 * p.dt));
        } catch (const NumericalError&) {
            throw BlowUp("skeleton: non-finite state", t + p.dt);
        }
        if (!x.all_finite() || norms.norm_h(x, *p.model.basis) > kOverflowRadius)
            throw BlowUp("skeleton: solution left the admissible region", t + p.dt);
        if ((n + 1) % p.record_stride == 0 || n + 1 == steps) {
            out.times.push_back(static_cast<double>(n + 1) * p.dt);
            out.states.push_back(x);
        }
    }
    return out;
}

/// The control-to-path map phi -> Xbar^phi with every other ingredient taken from `templ`.
inline SlowPath solve_forward_map(const ControlPath& phi, const SkeletonProblem& templ) {
    SkeletonProblem p = templ;
    p.phi = phi;
    return solve_skeleton(p);
}

/// sup_t ||X||_H^2 + theta1 int ||X||_V^gamma along a recorded path (left-endpoint rule).
inline double path_energy(const SlowPath& path, const ModelSpec& model) {
    const auto norms = model.slow_norms();
    const double gamma = model.slow.gamma1();
    double sup = 0.0, integral = 0.0;
    for (std::size_t j = 0; j < path.size(); ++j) {
        const double n = norms.norm_h(path.states[j], *model.basis);
        sup = std::max(sup, n * n);
        if (j + 1 < path.size()) integral += (path.times[j + 1] - path.times[j]) * std::pow(norms.norm_v(path.states[j]), gamma);
    }
    return sup + model.constants.theta1 * integral;
}

}  // namespace msldp
