// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// The frozen fast equation, measured exponential ergodicity and the averaged
// slow drift.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "msldp/error.hpp"
#include "msldp/models.hpp"
#include "msldp/noise.hpp"
#include "msldp/parallel.hpp"
#include "msldp/simulate.hpp"
#include "msldp/space.hpp"

namespace msldp {

/// One micro step of dY = F2(x, Y) dt + G2 dW on time scale 1.
inline GridFunction step_frozen(const ModelSpec& model, const GridFunction& x, const GridFunction& y, double dt,
                                std::span<const double> dW) {
    const auto& basis = *model.basis;
    std::vector<double> c(model.modes());
    for (std::size_t k = 0; k < c.size(); ++k) c[k] = model.noise.g2_coeff(k) * dW[k];
    GridFunction yr = y;
    yr.axpy(dt, model.fast.nonlinear_part(x, y));
    yr += basis.synthesize(c);
    return implicit_solve(basis, yr, dt, model.fast.linear_part());
}

inline std::size_t frozen_steps(double horizon, double dt) {
    if (!(horizon > 0.0) || !(dt > 0.0)) throw Error("frozen equation: horizon and dt must be positive");
    return static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
}

/// Integrates the frozen equation on [0, horizon], recording every `stride` steps.
inline SlowPath solve_frozen(const ModelSpec& model, const GridFunction& x, const GridFunction& y0, double horizon,
                             double dt, Stream& stream, std::size_t stride = 1) {
    require_same_grid(x, y0);
    const std::size_t steps = frozen_steps(horizon, dt);
    const double h = horizon / static_cast<double>(steps);
    const double sq = std::sqrt(h);
    stride = std::max<std::size_t>(stride, 1);
    SlowPath out;
    GridFunction y = y0;
    out.times.push_back(0.0);
    out.states.push_back(y);
    std::vector<double> dW(model.modes());
    for (std::size_t n = 0; n < steps; ++n) {
        for (double& w : dW) w = sq * stream.normal();
        y = step_frozen(model, x, y, h, dW);
        if (!y.all_finite()) throw NumericalError("solve_frozen: non-finite state", n);
        if ((n + 1) % stride == 0 || n + 1 == steps) {
            out.times.push_back(static_cast<double>(n + 1) * h);
            out.states.push_back(y);
        }
    }
    return out;
}

// ---------------------------------------------------------------- ergodic rate

struct ErgodicRateSettings {
    double dt = 0.01;
    double horizon = 0.0;  ///< 0 selects 20/kappa
    double burn_in = 0.0;  ///< 0 selects 5/kappa; burn-in of the stationary reference copy
    std::size_t replicas = 200;
    double window_start = 0.0;
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

struct ErgodicRateFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    bool decaying = false;
    std::size_t points_used = 0;
    std::vector<double> times;
    /// Per start: replica mean and standard error of f(Y_t^y) - f(Y_t^stat).
    std::vector<std::vector<double>> residual;
    std::vector<std::vector<double>> stderr_;
};

/// Fits log|E f(Y_t^{x,y}) - mu^x f| against t. The reference expectation comes
/// from a stationary copy driven by the same noise as each started replica.
inline ErgodicRateFit measure_ergodic_rate(const ModelSpec& model, const GridFunction& x,
                                           const std::function<double(const GridFunction&)>& f_test,
                                           const std::vector<GridFunction>& starts, ErgodicRateSettings s = {}) {
    if (starts.empty()) throw Error("measure_ergodic_rate: need at least one start");
    if (s.replicas < 2) throw Error("measure_ergodic_rate: need at least two replicas");
    const double kappa = model.constants.kappa;
    if (s.horizon <= 0.0) s.horizon = 20.0 / kappa;
    if (s.burn_in <= 0.0) s.burn_in = 5.0 / kappa;
    const SeedSpec seed{s.seed};
    const std::size_t steps = frozen_steps(s.horizon, s.dt);
    const double h = s.horizon / static_cast<double>(steps);
    const double sq = std::sqrt(h);
    GridFunction zero(x.grid());

    // per replica: differences[start][step]
    auto per_rep = parallel_map(s.replicas, s.threads, [&](std::size_t r) {
        Stream st_stat = seed.stream(r, purpose::stationary);
        const SlowPath burn = solve_frozen(model, x, zero, s.burn_in, s.dt, st_stat, frozen_steps(s.burn_in, s.dt));
        std::vector<std::vector<double>> diff(starts.size(), std::vector<double>(steps + 1));
        for (std::size_t i = 0; i < starts.size(); ++i) {
            Stream st = seed.stream(r, purpose::frozen);
            GridFunction y = starts[i];
            GridFunction z = burn.states.back();
            std::vector<double> dW(model.modes());
            diff[i][0] = f_test(y) - f_test(z);
            for (std::size_t n = 0; n < steps; ++n) {
                for (double& w : dW) w = sq * st.normal();
                y = step_frozen(model, x, y, h, dW);
                z = step_frozen(model, x, z, h, dW);
                diff[i][n + 1] = f_test(y) - f_test(z);
            }
        }
        return diff;
    });

    ErgodicRateFit fit;
    fit.times.resize(steps + 1);
    for (std::size_t n = 0; n <= steps; ++n) fit.times[n] = static_cast<double>(n) * h;
    const double R = static_cast<double>(s.replicas);
    std::vector<double> ts, ls;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        std::vector<double> mean(steps + 1), se(steps + 1);
        for (std::size_t n = 0; n <= steps; ++n) {
            double m = 0.0, q = 0.0;
            for (const auto& rep : per_rep) m += rep[i][n];
            m /= R;
            for (const auto& rep : per_rep) q += (rep[i][n] - m) * (rep[i][n] - m);
            mean[n] = m;
            se[n] = std::sqrt(q / (R - 1.0) / R);
        }
        const double scale = std::abs(mean[0]);
        // Use the initial run of resolvable points only, so the noise floor does not bias the slope.
        for (std::size_t n = 0; n <= steps; ++n) {
            const double a = std::abs(mean[n]);
            if (!(a > 3.0 * se[n]) || !(a > 1e-12 * scale) || a == 0.0) break;
            if (fit.times[n] < s.window_start) continue;
            ts.push_back(fit.times[n]);
            ls.push_back(std::log(a));
        }
        fit.residual.push_back(std::move(mean));
        fit.stderr_.push_back(std::move(se));
    }
    fit.points_used = ts.size();
    if (ts.size() >= 3) {
        double mt = 0.0, ml = 0.0;
        for (std::size_t j = 0; j < ts.size(); ++j) {
            mt += ts[j];
            ml += ls[j];
        }
        mt /= static_cast<double>(ts.size());
        ml /= static_cast<double>(ts.size());
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t j = 0; j < ts.size(); ++j) {
            sxy += (ts[j] - mt) * (ls[j] - ml);
            sxx += (ts[j] - mt) * (ts[j] - mt);
        }
        if (sxx > 0.0) {
            fit.slope = sxy / sxx;
            fit.intercept = ml - fit.slope * mt;
            fit.decaying = fit.slope < 0.0;
        }
    }
    return fit;
}

// ---------------------------------------------------------------- averaged drift

struct ErgodicMcParams {
    double burn_in = 0.0;         ///< 0 selects 10/kappa
    double sample_horizon = 0.0;  ///< 0 selects 40/kappa
    double dt = 0.01;
    std::size_t replicas = 20;
    std::uint64_t seed = 0;
    double tolerance = std::numeric_limits<double>::infinity();
    unsigned threads = 1;
};

enum class DriftBackend { AnalyticLinear, ErgodicMC };

class AveragedDrift {
public:
    struct Value {
        GridFunction mean;
        GridFunction stderr_;
        /// sqrt(h sum stderr_i^2), the standard error of the mean in discrete L2.
        double stderr_norm = 0.0;
    };

    /// Exact backend: linear_ou fast drift with linear coupling, or F1 independent of y.
    static AveragedDrift analytic(const ModelSpec& model) {
        if (model.coupling.depends_on_fast() && !(model.fast.is_linear_ou() && model.coupling.is_linear()))
            throw Error("averaged_drift: analytic backend needs linear_ou with linear coupling");
        return AveragedDrift(model, DriftBackend::AnalyticLinear, {});
    }

    static AveragedDrift ergodic_mc(const ModelSpec& model, ErgodicMcParams p) {
        const double kappa = model.constants.kappa;
        if (p.burn_in <= 0.0) p.burn_in = 10.0 / kappa;
        if (p.sample_horizon <= 0.0) p.sample_horizon = 40.0 / kappa;
        if (p.burn_in < 5.0 / kappa * (1.0 - 1e-12) || p.sample_horizon < 20.0 / kappa * (1.0 - 1e-12))
            throw Error("averaged_drift: need burn_in >= 5/kappa and sample_horizon >= 20/kappa");
        if (p.replicas < 2) throw Error("averaged_drift: need at least two replicas");
        return AveragedDrift(model, DriftBackend::ErgodicMC, p);
    }

    /// Picks the exact backend when it applies.
    static AveragedDrift automatic(const ModelSpec& model, ErgodicMcParams p = {}) {
        if (!model.coupling.depends_on_fast() || (model.fast.is_linear_ou() && model.coupling.is_linear()))
            return analytic(model);
        return ergodic_mc(model, p);
    }

    DriftBackend backend() const noexcept { return backend_; }
    const ModelSpec& model() const noexcept { return model_; }
    const ErgodicMcParams& mc_params() const noexcept { return params_; }

    /// Mean of F1(x, .) under the invariant measure of the frozen equation; memoized.
    Value evaluate(const GridFunction& x) const {
        model_.basis->check(x);
        auto key = quantize(x);
        {
            std::lock_guard lock(cache_->mutex);
            if (auto it = cache_->values.find(key); it != cache_->values.end()) return it->second;
        }
        Value v = compute(x);
        std::lock_guard lock(cache_->mutex);
        return cache_->values.emplace(std::move(key), std::move(v)).first->second;
    }

    GridFunction operator()(const GridFunction& x) const { return evaluate(x).mean; }

    /// J^T w of the averaged drift (Euclidean pairing); exact backend only.
    GridFunction jacobian_transpose(const GridFunction& x, const GridFunction& w) const {
        require_same_grid(x, w);
        const double cs = model_.coupling.c_slow(), cf = model_.coupling.c_fast();
        if (backend_ != DriftBackend::AnalyticLinear && cf != 0.0)
            throw Error("averaged_drift: gradients need the analytic backend");
        if (model_.coupling.is_linear()) {
            GridFunction out = w;
            out *= cs;
            if (cf != 0.0) out.axpy(cf, fast_mean(w));
            return out;
        }
        const auto& b = std::get<BoundedLipschitzCoupling>(model_.coupling.kind());
        GridFunction out(x.grid());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double th = std::tanh(cs * x[i] / b.saturation);
            out[i] = (1.0 - th * th) * cs * w[i];
        }
        return out;
    }

    /// Declared Lipschitz constant L_F1 (1 + L_x / (kappa/2)).
    double declared_lipschitz() const {
        const double lf = model_.coupling.lipschitz(model_.slow_norms(), *model_.basis);
        if (!model_.coupling.depends_on_fast()) return std::abs(model_.coupling.c_slow());
        return lf * (1.0 + model_.constants.h3_C / (0.5 * model_.constants.kappa));
    }

    std::size_t cache_size() const {
        std::lock_guard lock(cache_->mutex);
        return cache_->values.size();
    }

private:
    struct Cache {
        mutable std::mutex mutex;
        std::map<std::vector<long long>, Value> values;
    };

    AveragedDrift(ModelSpec model, DriftBackend backend, ErgodicMcParams p)
        : model_(std::move(model)), backend_(backend), params_(p), cache_(std::make_shared<Cache>()) {}

    static std::vector<long long> quantize(const GridFunction& x) {
        std::vector<long long> k(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) k[i] = std::llround(x[i] * 1e9);
        return k;
    }

    /// y*(x) = b (lambda2 - lap Delta_h)^{-1} x, the invariant mean of the linear OU.
    GridFunction fast_mean(const GridFunction& x) const {
        const auto& o = std::get<LinearOU>(model_.fast.kind());
        if (!o.laplacian) {
            GridFunction y = x;
            y *= o.b / o.lambda2;
            return y;
        }
        return model_.basis->apply_diagonal(x, [&](double lam) { return o.b / (o.lambda2 + lam); });
    }

    Value compute(const GridFunction& x) const {
        GridFunction zero(x.grid());
        if (!model_.coupling.depends_on_fast()) return {model_.coupling.apply(x, zero), zero, 0.0};
        if (backend_ == DriftBackend::AnalyticLinear) return {model_.coupling.apply(x, fast_mean(x)), zero, 0.0};
        return compute_mc(x);
    }

    Value compute_mc(const GridFunction& x) const {
        const ErgodicMcParams& p = params_;
        const SeedSpec seed{p.seed};
        const std::size_t burn = frozen_steps(p.burn_in, p.dt);
        const std::size_t samp = frozen_steps(p.sample_horizon, p.dt);
        const double hb = p.burn_in / static_cast<double>(burn);
        const double hs = p.sample_horizon / static_cast<double>(samp);
        // Common random numbers: replica r uses the same stream for every x.
        auto avgs = parallel_map(p.replicas, p.threads, [&](std::size_t r) {
            Stream st = seed.stream(r, purpose::frozen);
            GridFunction y(x.grid());
            std::vector<double> dW(model_.modes());
            for (std::size_t n = 0; n < burn; ++n) {
                for (double& w : dW) w = std::sqrt(hb) * st.normal();
                y = step_frozen(model_, x, y, hb, dW);
            }
            GridFunction acc(x.grid());
            for (std::size_t n = 0; n < samp; ++n) {
                acc += model_.coupling.apply(x, y);
                for (double& w : dW) w = std::sqrt(hs) * st.normal();
                y = step_frozen(model_, x, y, hs, dW);
            }
            if (!acc.all_finite()) throw NumericalError("averaged_drift: non-finite frozen path", r);
            acc *= 1.0 / static_cast<double>(samp);
            return acc;
        });
        const double R = static_cast<double>(p.replicas);
        GridFunction mean(x.grid()), se(x.grid());
        for (const auto& a : avgs) mean += a;
        mean *= 1.0 / R;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double q = 0.0;
            for (const auto& a : avgs) q += (a[i] - mean[i]) * (a[i] - mean[i]);
            se[i] = std::sqrt(q / (R - 1.0) / R);
        }
        const double se_norm = norm_h(se);
        if (se_norm > p.tolerance)
            throw Error("averaged_drift: standard error " + std::to_string(se_norm) + " exceeds tolerance " +
                        std::to_string(p.tolerance) + "; increase sample_horizon or replicas");
        return {mean, se, se_norm};
    }

    ModelSpec model_;
    DriftBackend backend_;
    ErgodicMcParams params_;
    std::shared_ptr<Cache> cache_;
};

}  // namespace msldp
