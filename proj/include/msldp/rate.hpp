// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Rate function evaluation: minimal control energy subject to the skeleton
// dynamics, with discrete-adjoint gradients and penalty continuation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <variant>
#include <vector>

#include "msldp/error.hpp"
#include "msldp/noise.hpp"
#include "msldp/skeleton.hpp"
#include "msldp/space.hpp"

namespace msldp {

/// Terminal functional g(X) with its Euclidean gradient.
struct TerminalFunctional {
    enum class Kind { ModeCoefficient, NodalValue, Mean };
    Kind kind = Kind::ModeCoefficient;
    std::size_t index = 0;  ///< 0-based mode or node

    double value(const GridFunction& x, const SpectralBasis& basis) const {
        switch (kind) {
            case Kind::ModeCoefficient: {
                auto e = basis.mode(index);
                double s = 0.0;
                for (std::size_t i = 0; i < x.size(); ++i) s += e[i] * x[i];
                return x.grid().h() * s;
            }
            case Kind::NodalValue:
                return x[index];
            case Kind::Mean: {
                double s = 0.0;
                for (double v : x.values()) s += v;
                return x.grid().h() * s;
            }
        }
        return 0.0;
    }

    GridFunction gradient(const GridFunction& x, const SpectralBasis& basis) const {
        GridFunction g(x.grid());
        const double h = x.grid().h();
        switch (kind) {
            case Kind::ModeCoefficient: {
                auto e = basis.mode(index);
                for (std::size_t i = 0; i < x.size(); ++i) g[i] = h * e[i];
                break;
            }
            case Kind::NodalValue:
                g[index] = 1.0;
                break;
            case Kind::Mean:
                for (std::size_t i = 0; i < x.size(); ++i) g[i] = h;
                break;
        }
        return g;
    }

    void validate(const Grid& grid) const {
        if (index >= grid.size()) throw Error("terminal functional index out of range");
    }
};

/// Event {g(X_T) >= level}.
struct TerminalSetTarget {
    TerminalFunctional g;
    double level = 0.0;
};

/// Path target f given on the skeleton recording grid.
struct FullPathTarget {
    SlowPath f;
};

struct OptimizerSettings {
    std::size_t max_iterations = 500;  ///< per penalty stage
    double gradient_tolerance = 1e-6;  ///< relative: ||g|| < tol (1 + |objective|)
    double constraint_tolerance = 1e-4;
    double initial_weight = 10.0;
    std::size_t max_continuation = 40;
    std::size_t memory = 10;
    double armijo = 1e-4;
};

struct RateProblem {
    SkeletonProblem skeleton;
    std::variant<TerminalSetTarget, FullPathTarget> target;
    OptimizerSettings opt;
};

struct ObjectiveEval {
    double value = 0.0;
    std::vector<double> gradient;
    double energy = 0.0;
    double penalty = 0.0;   ///< unweighted penalty term
    double residual = 0.0;  ///< constraint violation in target units
    bool blew_up = false;
};

struct RateResult {
    double I_value = std::numeric_limits<double>::infinity();
    ControlPath phi_star;
    double residual = std::numeric_limits<double>::infinity();
    bool feasible = false;
    std::size_t iterations = 0;
    std::vector<double> gradient_norms;
    double final_weight = 0.0;
};

namespace detail {

/// Euclidean gradient of ||d||_H^2.
inline GridFunction h_norm_sq_gradient(const GridFunction& d, const TripleNorms& norms, const SpectralBasis& basis) {
    GridFunction g(d.grid());
    if (norms.pivot == Pivot::L2) {
        g = d;
        g *= 2.0 * d.grid().h();
        return g;
    }
    g = basis.apply_diagonal(d, [](double lam) { return 1.0 / lam; });
    g *= 2.0 * d.grid().h();
    return g;
}

/// Recorded indices of the full-path penalty: every record_stride steps plus the final step.
inline std::vector<std::size_t> record_indices(std::size_t steps, std::size_t stride) {
    std::vector<std::size_t> idx;
    for (std::size_t n = 0; n <= steps; n += stride) idx.push_back(n);
    if (idx.back() != steps) idx.push_back(steps);
    return idx;
}

}  // namespace detail

/// Penalized objective 1/2 int ||phi||^2 + w * penalty and its discrete-adjoint gradient.
inline ObjectiveEval objective_and_gradient(const RateProblem& prob, const ControlPath& phi, double weight) {
    const SkeletonProblem& sp = prob.skeleton;
    if (sp.step != SkeletonStep::Exponential) throw Error("rate: gradients need the exponential skeleton step");
    if (!(weight > 0.0)) throw Error("rate: penalty weight must be positive");
    SkeletonProblem p = sp;
    p.phi = phi;
    p.validate();
    const ModelSpec& model = p.model;
    const auto& basis = *model.basis;
    const auto norms = model.slow_norms();
    const std::size_t steps = p.steps();
    const std::size_t K = model.modes();
    const double dt = p.dt;

    ObjectiveEval ev;
    ev.gradient.assign(phi.flat().size(), 0.0);
    ev.energy = control_energy(phi);

    // Forward sweep, keeping every micro state.
    std::vector<GridFunction> xs;
    xs.reserve(steps + 1);
    xs.push_back(p.x0);
    std::vector<std::size_t> seg(steps);
    try {
        for (std::size_t n = 0; n < steps; ++n) {
            const double t = static_cast<double>(n) * dt;
            seg[n] = phi.segment_at(t + 0.5 * dt);
            GridFunction x = skeleton_step(p, xs.back(), phi.row(seg[n]));
            if (!x.all_finite() || norms.norm_h(x, basis) > kOverflowRadius) throw BlowUp("rate: forward blow-up", t + dt);
            xs.push_back(std::move(x));
        }
    } catch (const Error&) {
        ev.value = std::numeric_limits<double>::infinity();
        ev.blew_up = true;
        std::fill(ev.gradient.begin(), ev.gradient.end(), 0.0);
        return ev;
    }

    // Penalty and its gradient at each stored state.
    std::vector<GridFunction> pen_grad;  // indexed by step, lazily zero
    std::vector<bool> has_pen(steps + 1, false);
    pen_grad.resize(steps + 1, GridFunction(p.x0.grid()));
    if (auto* ts = std::get_if<TerminalSetTarget>(&prob.target)) {
        ts->g.validate(model.grid);
        const double gv = ts->g.value(xs.back(), basis);
        const double viol = std::max(0.0, ts->level - gv);
        ev.penalty = viol * viol;
        ev.residual = viol;
        if (viol > 0.0) {
            pen_grad[steps] = ts->g.gradient(xs.back(), basis);
            pen_grad[steps] *= -2.0 * weight * viol;
            has_pen[steps] = true;
        }
    } else {
        const auto& f = std::get<FullPathTarget>(prob.target).f;
        const auto idx = detail::record_indices(steps, p.record_stride);
        if (f.size() != idx.size()) throw GridMismatch("rate: target path is not on the skeleton recording grid");
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const std::size_t n = idx[j];
            const double w_j = j + 1 < idx.size() ? static_cast<double>(idx[j + 1] - n) * dt
                                                  : static_cast<double>(n - idx[j - 1]) * dt;
            const GridFunction d = xs[n] - f.states[j];
            const double nh = norms.norm_h(d, basis);
            ev.penalty += w_j * nh * nh;
            GridFunction g = detail::h_norm_sq_gradient(d, norms, basis);
            g *= weight * w_j;
            pen_grad[n] += g;
            has_pen[n] = true;
        }
        ev.residual = std::sqrt(ev.penalty);
    }
    ev.value = ev.energy + weight * ev.penalty;

    // Backward sweep.
    const LinearPart lp = model.slow.linear_part();
    GridFunction lam = pen_grad[steps];
    for (std::size_t n = steps; n-- > 0;) {
        const GridFunction& x = xs[n];
        const GridFunction mu = exp_forcing(basis, lam, dt, lp);
        const auto sig = model.noise.g1_coefficients(x, basis);
        auto row = phi.row(seg[n]);
        std::vector<double> emu(K);
        for (std::size_t k = 0; k < K; ++k) {
            auto e = basis.mode(k);
            double s = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) s += e[i] * mu[i];
            emu[k] = s;
            ev.gradient[seg[n] * K + k] += dt * sig[k] * s;
        }
        GridFunction jt = model.slow.jacobian_transpose(x, mu);
        if (lp.diffusion != 0.0) jt.axpy(-lp.diffusion, laplacian(mu));
        if (lp.shift != 0.0) jt.axpy(lp.shift, mu);
        jt += p.drift->jacobian_transpose(x, mu);
        if (model.noise.g1_kind == G1Kind::StateLipschitz && model.noise.g1_lip != 0.0) {
            const auto c = basis.coefficients(x);
            std::vector<double> w(K);
            for (std::size_t k = 0; k < K; ++k) {
                const double th = std::tanh(c[k]);
                w[k] = model.noise.g1_lip * (1.0 - th * th) * row[k] * emu[k] * x.grid().h();
            }
            jt += basis.synthesize(w);
        }
        lam = exp_propagate(basis, lam, dt, lp);
        lam.axpy(dt, jt);
        if (has_pen[n]) lam += pen_grad[n];
    }
    for (std::size_t j = 0; j < phi.segments(); ++j)
        for (std::size_t k = 0; k < K; ++k) ev.gradient[j * K + k] += phi.segment_length(j) * phi.coeff(j, k);
    return ev;
}

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct StageOutcome {
    std::size_t iterations = 0;
    ObjectiveEval last;
};

/// L-BFGS with Armijo backtracking at a fixed penalty weight.
inline StageOutcome minimize_stage(const RateProblem& prob, ControlPath& phi, double weight, RateResult& trace) {
    const auto& o = prob.opt;
    StageOutcome out;
    ObjectiveEval cur = objective_and_gradient(prob, phi, weight);
    if (cur.blew_up) throw Error("rate: forward map blows up at the initial control");
    std::deque<std::pair<std::vector<double>, std::vector<double>>> mem;
    const std::size_t n = phi.flat().size();
    for (std::size_t it = 0; it < o.max_iterations; ++it) {
        const double gnorm = std::sqrt(dot(cur.gradient, cur.gradient));
        trace.gradient_norms.push_back(gnorm);
        if (gnorm < o.gradient_tolerance * (1.0 + std::abs(cur.value))) break;
        // Two-loop recursion.
        std::vector<double> q = cur.gradient;
        std::vector<double> alphas(mem.size());
        for (std::size_t m = mem.size(); m-- > 0;) {
            const auto& [s, y] = mem[m];
            alphas[m] = dot(s, q) / dot(y, s);
            for (std::size_t i = 0; i < n; ++i) q[i] -= alphas[m] * y[i];
        }
        if (!mem.empty()) {
            const auto& [s, y] = mem.back();
            const double gamma = dot(s, y) / dot(y, y);
            for (double& v : q) v *= gamma;
        } else {
            const double scale = 1.0 / std::max(1.0, gnorm);
            for (double& v : q) v *= scale;
        }
        for (std::size_t m = 0; m < mem.size(); ++m) {
            const auto& [s, y] = mem[m];
            const double beta = dot(y, q) / dot(y, s);
            for (std::size_t i = 0; i < n; ++i) q[i] += (alphas[m] - beta) * s[i];
        }
        std::vector<double> d(n);
        for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
        double slope = dot(d, cur.gradient);
        if (!(slope < 0.0)) {
            mem.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -cur.gradient[i] / std::max(1.0, gnorm);
            slope = dot(d, cur.gradient);
        }
        double step = 1.0;
        bool accepted = false;
        ControlPath trial = phi;
        ObjectiveEval next;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t i = 0; i < n; ++i) trial.flat()[i] = phi.flat()[i] + step * d[i];
            next = objective_and_gradient(prob, trial, weight);
            if (!next.blew_up && next.value <= cur.value + o.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        ++out.iterations;
        if (!accepted) break;
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial.flat()[i] - phi.flat()[i];
            y[i] = next.gradient[i] - cur.gradient[i];
        }
        if (dot(s, y) > 1e-16 * std::sqrt(dot(s, s) * dot(y, y))) {
            mem.emplace_back(std::move(s), std::move(y));
            if (mem.size() > o.memory) mem.pop_front();
        }
        const double decrease = cur.value - next.value;
        phi = trial;
        cur = std::move(next);
        if (decrease <= 1e-16 * std::max(1.0, std::abs(cur.value))) break;
    }
    out.last = cur;
    return out;
}

}  // namespace detail

/// Minimizes the penalized objective, doubling the weight until the residual meets the tolerance.
inline RateResult minimize_rate(const RateProblem& prob, const ControlPath& phi0) {
    for (double c : phi0.flat())
        if (!std::isfinite(c)) throw Error("rate: initial control must be finite");
    if (!(prob.opt.initial_weight > 0.0)) throw Error("rate: penalty weight must be positive");
    RateResult res{std::numeric_limits<double>::infinity(), phi0, std::numeric_limits<double>::infinity(), false, 0, {}, 0.0};
    ControlPath phi = phi0;
    double w = prob.opt.initial_weight;
    for (std::size_t stage = 0; stage <= prob.opt.max_continuation; ++stage) {
        auto st = detail::minimize_stage(prob, phi, w, res);
        res.iterations += st.iterations;
        res.residual = st.last.residual;
        res.final_weight = w;
        if (st.last.residual <= prob.opt.constraint_tolerance) {
            res.feasible = true;
            break;
        }
        w *= 2.0;
    }
    res.phi_star = phi;
    res.I_value = res.feasible ? control_energy(phi) : std::numeric_limits<double>::infinity();
    return res;
}

// ---------------------------------------------------------------- compactness

struct CompactnessReport {
    double M = 0.0;
    std::size_t samples = 0;
    std::vector<double> energies;  ///< sup ||X||^2 + theta1 int ||X||_V^gamma per sample
    double max_energy = 0.0;
    double diameter = 0.0;  ///< max pairwise path_metric
    std::size_t blowups = 0;
    double initial_norm_sq = 0.0;
    /// max energy / (1 + ||x0||^2)
    double fitted_C() const { return max_energy / (1.0 + initial_norm_sq); }
    bool within(double C) const {
        return blowups == 0 && std::all_of(energies.begin(), energies.end(),
                                           [&](double e) { return e <= C * (1.0 + initial_norm_sq); });
    }
};

/// Random controls in S_M = {int ||phi||^2 <= M}: Gaussian coefficients projected onto the ball.
inline ControlPath random_control_in_ball(const ControlPath& templ, double M, Stream& st) {
    ControlPath phi = templ;
    for (double& c : phi.flat()) c = st.normal();
    const double e = phi.squared_l2();
    // Scale so the typical draw lands outside the ball; a uniform radius factor keeps some interior samples.
    if (e > 0.0) phi *= std::sqrt(2.0 * M / e) * (0.5 + st.uniform());
    return project_to_ball(phi, M);
}

inline CompactnessReport level_set_sample(double M, std::size_t n_samples, const SkeletonProblem& templ,
                                          std::uint64_t seed, MetricChoice metric = MetricChoice::Full,
                                          unsigned threads = 1) {
    if (!(M >= 0.0)) throw Error("level_set_sample: M must be nonnegative");
    CompactnessReport rep;
    rep.M = M;
    const auto norms = templ.model.slow_norms();
    const double nx = norms.norm_h(templ.x0, *templ.model.basis);
    rep.initial_norm_sq = nx * nx;
    ControlPath zero = templ.phi;
    for (double& c : zero.flat()) c = 0.0;
    const std::size_t n = M == 0.0 ? 1 : n_samples;
    const SeedSpec ss{seed};
    auto paths = parallel_map(n, threads, [&](std::size_t i) -> std::optional<SlowPath> {
        Stream st = ss.stream(i, purpose::sampling);
        const ControlPath phi = M == 0.0 ? zero : random_control_in_ball(zero, M, st);
        try {
            return solve_forward_map(phi, templ);
        } catch (const BlowUp&) {
            return std::nullopt;
        }
    });
    std::vector<const SlowPath*> ok;
    for (const auto& p : paths) {
        if (!p) {
            ++rep.blowups;
            continue;
        }
        ok.push_back(&*p);
        rep.energies.push_back(path_energy(*p, templ.model));
        rep.max_energy = std::max(rep.max_energy, rep.energies.back());
    }
    rep.samples = n;
    for (std::size_t i = 0; i < ok.size(); ++i)
        for (std::size_t j = i + 1; j < ok.size(); ++j)
            rep.diameter = std::max(rep.diameter, path_metric(*ok[i], *ok[j], templ.model.slow.gamma1(), norms,
                                                              *templ.model.basis, metric));
    return rep;
}

}  // namespace msldp
