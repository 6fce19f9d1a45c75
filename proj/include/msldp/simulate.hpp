// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Semi-implicit Euler-Maruyama integrators for the slow-fast system, its
// controlled version and the block-frozen auxiliary fast process.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "msldp/error.hpp"
#include "msldp/models.hpp"
#include "msldp/noise.hpp"
#include "msldp/parallel.hpp"
#include "msldp/space.hpp"

namespace msldp {

struct ScaleParams {
    double epsilon = 1.0;
    double alpha = 1.0;
    double delta = 1.0;
    double T = 1.0;
    double dt = 0.05;

    /// Fills the defaults delta = sqrt(alpha) and dt = alpha/20, then shrinks dt so it divides T.
    static ScaleParams make(double epsilon, double alpha, double T, double dt = 0.0, double delta = 0.0) {
        ScaleParams s;
        s.epsilon = epsilon;
        s.alpha = alpha;
        s.T = T;
        s.delta = delta > 0.0 ? delta : std::sqrt(alpha);
        const double target = dt > 0.0 ? dt : alpha / 20.0;
        if (!(T > 0.0) || !(target > 0.0)) throw Error("ScaleParams: T and dt must be positive");
        const double steps = std::ceil(T / target - 1e-9);
        s.dt = T / steps;
        s.validate();
        return s;
    }

    std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }

    bool asymptotic_regime() const { return epsilon > 0.0 && alpha / epsilon <= 0.1; }

    void validate() const {
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("ScaleParams: epsilon must lie in [0, 1]");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw Error("ScaleParams: alpha must lie in (0, 1]");
        if (epsilon > 0.0 && alpha > epsilon * (1.0 + 1e-12)) throw Error("ScaleParams: need alpha <= epsilon");
        if (!(T > 0.0) || !(delta > 0.0) || !(dt > 0.0)) throw Error("ScaleParams: T, delta, dt must be positive");
        if (dt > alpha / 20.0 * (1.0 + 1e-9)) throw Error("ScaleParams: dt must not exceed alpha/20");
        const double n = T / dt;
        if (std::abs(n - std::round(n)) > 1e-6) throw Error("ScaleParams: dt must divide T");
    }
};

enum class StopMode { Tau, TauTilde };

struct StoppingSpec {
    double N = std::numeric_limits<double>::infinity();
    StopMode mode = StopMode::Tau;
    /// Skeleton path for TauTilde, sampled on the trajectory's recording grid.
    const SlowPath* skeleton = nullptr;

    void validate() const {
        if (!(N > 0.0)) throw Error("StoppingSpec: N must be positive");
        if (mode == StopMode::TauTilde && skeleton == nullptr) throw Error("StoppingSpec: tau_tilde needs a skeleton path");
    }
};

struct RunOptions {
    std::size_t record_stride = 0;  ///< micro steps between snapshots; 0 means delta/4
    bool record_fast = true;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<GridFunction> slow;
    std::vector<GridFunction> fast;
    std::vector<double> log_girsanov;
    double exit_time = 0.0;
    bool failed = false;
    double dt = 0.0;
    std::size_t record_stride = 1;
    /// int_0^{exit} ||X||_V^gamma, left-endpoint sum over micro steps.
    double v_energy = 0.0;

    double record_interval() const { return dt * static_cast<double>(record_stride); }
    SlowPath slow_path() const { return {times, slow}; }
    double final_log_weight() const { return log_girsanov.empty() ? 0.0 : log_girsanov.back(); }
};

struct SlowFastState {
    GridFunction x;
    GridFunction y;
};

/// Solves (I - dt (d Delta_h - s I)) u_new = u mode-wise.
inline GridFunction implicit_solve(const SpectralBasis& basis, const GridFunction& u, double dt, LinearPart lp) {
    if (lp.diffusion == 0.0) {
        if (lp.shift == 0.0) return u;
        GridFunction out = u;
        out *= 1.0 / (1.0 + dt * lp.shift);
        return out;
    }
    return basis.apply_diagonal(u, [&](double lam) { return 1.0 / (1.0 + dt * (lp.diffusion * lam + lp.shift)); });
}

/// e^{-dt L} u mode-wise, L = -(d Delta_h - s I).
inline GridFunction exp_propagate(const SpectralBasis& basis, const GridFunction& u, double dt, LinearPart lp) {
    if (lp.diffusion == 0.0) {
        GridFunction out = u;
        if (lp.shift != 0.0) out *= std::exp(-dt * lp.shift);
        return out;
    }
    return basis.apply_diagonal(u, [&](double lam) { return std::exp(-dt * (lp.diffusion * lam + lp.shift)); });
}

/// phi1(dt L) u = (I - e^{-dt L}) (dt L)^{-1} u mode-wise, the exact response to a forcing held constant over dt.
inline GridFunction exp_forcing(const SpectralBasis& basis, const GridFunction& u, double dt, LinearPart lp) {
    auto phi1 = [dt](double mu) {
        const double z = dt * mu;
        return z == 0.0 ? 1.0 : -std::expm1(-z) / z;
    };
    if (lp.diffusion == 0.0) {
        GridFunction out = u;
        if (lp.shift != 0.0) out *= phi1(lp.shift);
        return out;
    }
    return basis.apply_diagonal(u, [&](double lam) { return phi1(lp.diffusion * lam + lp.shift); });
}

/// The explicit remainder A(u) - (d Delta_h - s I) u.
inline GridFunction slow_remainder(const SlowOperator& op, const GridFunction& u) {
    const LinearPart lp = op.linear_part();
    GridFunction out = op.apply(u);
    if (lp.diffusion != 0.0) out.axpy(-lp.diffusion, laplacian(u));
    if (lp.shift != 0.0) out.axpy(lp.shift, u);
    return out;
}

inline double log_weight_increment(double epsilon, double dt, std::span<const double> phi, std::span<const double> dW) {
    if (phi.empty() || epsilon <= 0.0) return 0.0;
    double dot = 0.0, sq = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) {
        dot += phi[k] * dW[k];
        sq += phi[k] * phi[k];
    }
    return -dot / std::sqrt(epsilon) - 0.5 * sq * dt / epsilon;
}

/// One micro step of the (controlled) slow-fast system; `phi` is empty for the uncontrolled system.
inline SlowFastState step_slow_fast(const ModelSpec& model, const ScaleParams& scales, const SlowFastState& state,
                                    std::span<const double> dW, std::span<const double> phi = {},
                                    std::size_t step_index = 0) {
    const auto& basis = *model.basis;
    const std::size_t K = model.modes();
    if (dW.size() != K) throw Error("step_slow_fast: dW has the wrong number of modes");
    if (!phi.empty() && phi.size() != K) throw Error("step_slow_fast: phi has the wrong number of modes");
    if (!phi.empty() && !(scales.epsilon > 0.0)) throw Error("step_slow_fast: a control needs epsilon > 0");
    const double dt = scales.dt;
    const double se = std::sqrt(scales.epsilon);

    const auto sig = model.noise.g1_coefficients(state.x, basis);
    std::vector<double> cx(K), cy(K);
    const double fast_ctrl = phi.empty() ? 0.0 : dt / std::sqrt(scales.alpha * scales.epsilon);
    for (std::size_t k = 0; k < K; ++k) {
        const double pk = phi.empty() ? 0.0 : phi[k];
        cx[k] = sig[k] * (dt * pk + se * dW[k]);
        cy[k] = model.noise.g2_coeff(k) * (fast_ctrl * pk + dW[k] / std::sqrt(scales.alpha));
    }

    GridFunction xr = state.x;
    xr.axpy(dt, slow_remainder(model.slow, state.x));
    xr.axpy(dt, model.coupling.apply(state.x, state.y));
    xr += basis.synthesize(cx);

    GridFunction yr = state.y;
    yr.axpy(dt / scales.alpha, model.fast.nonlinear_part(state.x, state.y));
    yr += basis.synthesize(cy);

    SlowFastState next{implicit_solve(basis, xr, dt, model.slow.linear_part()),
                       implicit_solve(basis, yr, dt / scales.alpha, model.fast.linear_part())};
    if (!next.x.all_finite() || !next.y.all_finite()) throw NumericalError("step_slow_fast: non-finite state", step_index);
    return next;
}

inline constexpr double kOverflowRadius = 1e6;

inline std::size_t default_stride(const ScaleParams& scales) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scales.delta / 4.0 / scales.dt)));
}

namespace detail {

/// Running bookkeeping for tau_tilde on the skeleton side.
struct SkeletonTrack {
    std::vector<double> norm_h;
    std::vector<double> cum_v;  // left-endpoint V-energy up to each recorded time
};

inline SkeletonTrack track_skeleton(const SlowPath& p, const TripleNorms& norms, const SpectralBasis& basis, double gamma) {
    SkeletonTrack t;
    t.norm_h.resize(p.size());
    t.cum_v.assign(p.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) {
        t.norm_h[j] = norms.norm_h(p.states[j], basis);
        if (j > 0)
            t.cum_v[j] = t.cum_v[j - 1] + (p.times[j] - p.times[j - 1]) * std::pow(norms.norm_v(p.states[j - 1]), gamma);
    }
    return t;
}

}  // namespace detail

/// Integrates the system on [0, T] (or until the stopping time), recording every `record_stride` micro steps.
inline Trajectory run_trajectory(const ModelSpec& model, const ScaleParams& scales, const GridFunction& x0,
                                 const GridFunction& y0, const ControlPath* phi, const StoppingSpec& stopping,
                                 Stream& stream, RunOptions opts = {}) {
    scales.validate();
    stopping.validate();
    require_same_grid(x0, y0);
    model.basis->check(x0);
    if (phi && phi->modes() != model.modes()) throw Error("run_trajectory: control has the wrong number of modes");
    if (phi && std::abs(phi->horizon() - scales.T) > 1e-9 * scales.T) throw Error("run_trajectory: control horizon != T");

    const auto norms = model.slow_norms();
    const auto& basis = *model.basis;
    const double gamma = model.slow.gamma1();
    const std::size_t steps = scales.steps();
    const std::size_t stride = opts.record_stride ? opts.record_stride : default_stride(scales);
    const std::size_t K = model.modes();
    const double sqdt = std::sqrt(scales.dt);

    detail::SkeletonTrack sk;
    if (stopping.mode == StopMode::TauTilde) sk = detail::track_skeleton(*stopping.skeleton, norms, basis, gamma);
    auto skeleton_index = [&](double t) {
        const auto& ts = stopping.skeleton->times;
        auto it = std::upper_bound(ts.begin(), ts.end(), t + 1e-12);
        return it == ts.begin() ? std::size_t{0} : static_cast<std::size_t>(it - ts.begin()) - 1;
    };

    Trajectory tr;
    tr.dt = scales.dt;
    tr.record_stride = stride;
    tr.exit_time = scales.T;
    SlowFastState s{x0, y0};
    double lw = 0.0;
    auto record = [&](double t) {
        tr.times.push_back(t);
        tr.slow.push_back(s.x);
        if (opts.record_fast) tr.fast.push_back(s.y);
        tr.log_girsanov.push_back(lw);
    };
    auto tripped = [&](double t) {
        const double nx = norms.norm_h(s.x, basis);
        if (stopping.mode == StopMode::Tau) return nx > stopping.N;
        const std::size_t j = skeleton_index(t);
        return nx + sk.norm_h[j] + tr.v_energy + sk.cum_v[j] > stopping.N;
    };

    record(0.0);
    if (tripped(0.0)) {
        tr.exit_time = 0.0;
        return tr;
    }
    std::vector<double> dW(K);
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = static_cast<double>(n) * scales.dt;
        for (double& w : dW) w = sqdt * stream.normal();
        std::span<const double> ph;
        if (phi) ph = phi->at(t + 0.5 * scales.dt);
        lw += log_weight_increment(scales.epsilon, scales.dt, ph, dW);
        tr.v_energy += scales.dt * std::pow(norms.norm_v(s.x), gamma);
        s = step_slow_fast(model, scales, s, dW, ph, n);
        const double t1 = static_cast<double>(n + 1) * scales.dt;
        const bool overflow = norms.norm_h(s.x, basis) > kOverflowRadius;
        const bool stop = overflow || tripped(t1);
        if ((n + 1) % stride == 0 || n + 1 == steps || stop) record(t1);
        if (overflow) tr.failed = true;
        if (stop) {
            tr.exit_time = t1;
            break;
        }
    }
    return tr;
}

/// Fast process with its slow argument frozen on each delta-block; consumes the
/// same normals per micro step as run_trajectory, so one seed pairs the two.
inline Trajectory run_auxiliary(const ModelSpec& model, const ScaleParams& scales, const SlowPath& slow,
                                const GridFunction& y0, Stream& stream, std::size_t record_stride = 0) {
    scales.validate();
    if (slow.size() < 2) throw Error("run_auxiliary: slow path needs at least two samples");
    const double rec = slow.times[1] - slow.times[0];
    const double ratio = scales.delta / rec;
    if (std::abs(ratio - std::round(ratio)) > 1e-6 || ratio < 0.5)
        throw Error("run_auxiliary: slow path recording interval must divide delta");
    const auto block = static_cast<std::size_t>(std::llround(ratio));

    const auto& basis = *model.basis;
    const std::size_t steps = scales.steps();
    const std::size_t stride = record_stride ? record_stride : default_stride(scales);
    const std::size_t K = model.modes();
    const double sqdt = std::sqrt(scales.dt);
    const double inv_sa = 1.0 / std::sqrt(scales.alpha);

    Trajectory tr;
    tr.dt = scales.dt;
    tr.record_stride = stride;
    tr.exit_time = scales.T;
    GridFunction y = y0;
    auto record = [&](double t) {
        tr.times.push_back(t);
        tr.fast.push_back(y);
        tr.log_girsanov.push_back(0.0);
    };
    record(0.0);
    std::vector<double> c(K);
    for (std::size_t n = 0; n < steps; ++n) {
        const double t = static_cast<double>(n) * scales.dt;
        std::size_t j = static_cast<std::size_t>(std::floor(t / scales.delta + 1e-9)) * block;
        if (j >= slow.size()) {
            if (t > slow.times.back() + 1e-9) throw Error("run_auxiliary: slow path shorter than T");
            j = slow.size() - 1;
        }
        const GridFunction& xb = slow.states[j];
        for (std::size_t k = 0; k < K; ++k) c[k] = model.noise.g2_coeff(k) * inv_sa * sqdt * stream.normal();
        GridFunction yr = y;
        yr.axpy(scales.dt / scales.alpha, model.fast.nonlinear_part(xb, y));
        yr += basis.synthesize(c);
        y = implicit_solve(basis, yr, scales.dt / scales.alpha, model.fast.linear_part());
        if (!y.all_finite()) throw NumericalError("run_auxiliary: non-finite state", n);
        if ((n + 1) % stride == 0 || n + 1 == steps) record(static_cast<double>(n + 1) * scales.dt);
    }
    return tr;
}

/// Left-endpoint estimate of int_0^{T ^ exit} ||X_t - X_{t(delta)}||_H^2 dt from one recorded path.
inline double time_increment_statistic(const Trajectory& traj, double delta, const ModelSpec& model) {
    const double rec = traj.record_interval();
    const double ratio = delta / rec;
    if (!(delta > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-6 || ratio < 0.5)
        throw Error("time_increment_statistic: recording stride must divide delta");
    const auto block = static_cast<std::size_t>(std::llround(ratio));
    const auto norms = model.slow_norms();
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < traj.slow.size(); ++j) {
        if (traj.times[j] >= traj.exit_time) break;
        const GridFunction d = traj.slow[j] - traj.slow[(j / block) * block];
        const double n = norms.norm_h(d, *model.basis);
        s += (traj.times[j + 1] - traj.times[j]) * n * n;
    }
    return s;
}

/// Runs `count` trajectories; trajectory i uses stream (seed, i, trajectory).
inline std::vector<Trajectory> run_ensemble(const ModelSpec& model, const ScaleParams& scales, const GridFunction& x0,
                                            const GridFunction& y0, const ControlPath* phi,
                                            const StoppingSpec& stopping, const SeedSpec& seed, std::size_t count,
                                            unsigned threads = 1, RunOptions opts = {}) {
    return parallel_map(count, threads, [&](std::size_t i) {
        Stream st = seed.stream(i, purpose::trajectory);
        return run_trajectory(model, scales, x0, y0, phi, stopping, st, opts);
    });
}

/// CSV with columns t, ||X||_H, ||X||_V, ||Y||_H, log_girsanov.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const ModelSpec& model) {
    const auto norms = model.slow_norms();
    os << "t,x_norm_h,x_norm_v,y_norm_h,log_girsanov\n" << std::setprecision(17);
    for (std::size_t j = 0; j < tr.times.size(); ++j) {
        os << tr.times[j] << ",";
        if (j < tr.slow.size())
            os << norms.norm_h(tr.slow[j], *model.basis) << "," << norms.norm_v(tr.slow[j]);
        else
            os << ",";
        os << "," << (j < tr.fast.size() ? norm_h(tr.fast[j]) : 0.0) << "," << tr.log_girsanov[j] << "\n";
    }
}

}  // namespace msldp
