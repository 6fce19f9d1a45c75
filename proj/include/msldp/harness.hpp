// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end experiments: weak convergence to the skeleton, event probability
// estimation and the LDP scaling fit, plus config loading and result files.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msldp/averaging.hpp"
#include "msldp/config.hpp"
#include "msldp/error.hpp"
#include "msldp/models.hpp"
#include "msldp/noise.hpp"
#include "msldp/parallel.hpp"
#include "msldp/rate.hpp"
#include "msldp/simulate.hpp"
#include "msldp/skeleton.hpp"
#include "msldp/space.hpp"

#ifndef MSLDP_VERSION
#define MSLDP_VERSION "0.1.0"
#endif

namespace msldp {

inline constexpr const char* kVersion = MSLDP_VERSION;

// ---------------------------------------------------------------- config model

struct ScalePoint {
    double epsilon = 0.1;
    double alpha = 0.01;
};

enum class Sampler { Naive, Girsanov };
enum class ControlKind { Zero, Constant, File, Optimal };

struct ControlSpec {
    ControlKind kind = ControlKind::Zero;
    double value = 0.0;
    std::size_t segments = 20;
    std::string file;
};

struct InitialSpec {
    std::string kind = "zero";  ///< zero | constant | mode
    double value = 0.0;
    std::size_t mode = 1;       ///< 1-based
};

struct ExperimentConfig {
    ModelSpec model;
    std::vector<ScalePoint> points;
    double T = 1.0;
    double dt_max = 0.0;  ///< 0 selects alpha/20
    double delta = 0.0;   ///< 0 selects sqrt(alpha)
    std::size_t records = 50;
    InitialSpec x0_spec, y0_spec;
    GridFunction x0, y0;
    TerminalFunctional event_g;
    double event_level = 1.0;
    std::size_t ensemble_size = 100;
    Sampler sampler = Sampler::Naive;
    ControlSpec control;
    ControlKind tilt = ControlKind::Optimal;
    std::size_t rate_segments = 50;
    double rate_dt = 1e-3;
    OptimizerSettings optimizer;
    std::string averaging_backend = "auto";
    ErgodicMcParams mc;
    ErgodicRateSettings ergodic;
    double ergodic_start_offset = 5.0;
    double skeleton_dt = 1e-3;
    double level_set_M = 4.0;
    std::size_t level_set_samples = 20;
    int check_samples = 500;
    double check_max_norm = 10.0;
    double stop_N = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string config_text;
    std::uint64_t config_hash = 0;

    explicit ExperimentConfig(ModelSpec m) : model(std::move(m)), x0(model.grid), y0(model.grid) {}
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"grid", {"n_interior", "length", "first_eigenvalue"}},
        {"slow", {"kind", "p", "q", "c", "r", "with_phi", "f", "h", "stabilization"}},
        {"coupling", {"kind", "c_slow", "c_fast", "saturation"}},
        {"fast", {"kind", "lambda2", "b", "laplacian", "c1", "c2", "b_slope", "b_clip"}},
        {"noise", {"g1_kind", "g1_sigma", "g1_lip", "g2_sigma"}},
        {"initial", {"x0", "x0_value", "x0_mode", "y0", "y0_value", "y0_mode"}},
        {"scales", {"epsilon", "alpha", "alpha_exponent", "T", "dt", "delta", "records"}},
        {"event", {"functional", "index", "level"}},
        {"ensemble", {"size", "sampler", "tilt"}},
        {"control", {"kind", "value", "segments", "file"}},
        {"rate", {"segments", "dt", "initial_weight", "constraint_tolerance", "gradient_tolerance", "max_iterations",
                  "max_continuation"}},
        {"averaging", {"backend", "replicas", "burn_in", "sample_horizon", "dt", "tolerance", "rate_replicas",
                       "rate_horizon", "rate_dt", "start_offset"}},
        {"skeleton", {"dt", "level_set_M", "level_set_samples"}},
        {"checks", {"samples", "max_norm"}},
        {"stopping", {"N"}},
        {"run", {"seed", "threads"}},
        {"recipe", {"name", "subcommand", "section", "description"}},
        {"tolerance", {"*"}},
    };
    return s;
}

inline SlowOperator slow_from_config(const Config& c) {
    const std::string kind = c.get_string("slow", "kind", "p_laplace");
    const double stab = c.get_double("slow", "stabilization", 1.0);
    if (kind == "p_laplace")
        return SlowOperator(PLaplace{c.get_double("slow", "p", 2.0), c.get_double("slow", "q", 2.0), c.get_double("slow", "c", 0.0)}, stab);
    if (kind == "porous_media")
        return SlowOperator(PorousMedia{c.get_double("slow", "r", 3.0), c.get_bool("slow", "with_phi", true)}, stab);
    if (kind == "fast_diffusion") return SlowOperator(FastDiffusion{c.get_double("slow", "r", 0.5)}, stab);
    if (kind == "burgers") return SlowOperator(Burgers{c.get_double("slow", "f", 1.0), c.get_list("slow", "h", {0.5})}, stab);
    throw ConfigError("unknown slow kind '" + kind + "'", c.line_of("slow", "kind"));
}

inline CouplingF1 coupling_from_config(const Config& c) {
    const std::string kind = c.get_string("coupling", "kind", "linear");
    const double cs = c.get_double("coupling", "c_slow", 0.0), cf = c.get_double("coupling", "c_fast", 1.0);
    if (kind == "linear") return CouplingF1(LinearCoupling{cs, cf});
    if (kind == "bounded_lipschitz")
        return CouplingF1(BoundedLipschitzCoupling{c.get_double("coupling", "saturation", 1.0), cs, cf});
    throw ConfigError("unknown coupling kind '" + kind + "'", c.line_of("coupling", "kind"));
}

inline FastDrift fast_from_config(const Config& c) {
    const std::string kind = c.get_string("fast", "kind", "linear_ou");
    if (kind == "linear_ou")
        return FastDrift(LinearOU{c.get_double("fast", "lambda2", 1.0), c.get_double("fast", "b", 1.0),
                                  c.get_bool("fast", "laplacian", false)});
    if (kind == "reaction_diffusion")
        return FastDrift(ReactionDiffusion{c.get_double("fast", "c1", 0.0), c.get_double("fast", "c2", 1.0),
                                           c.get_double("fast", "b_slope", 1.0), c.get_double("fast", "b_clip", 1.0)});
    throw ConfigError("unknown fast kind '" + kind + "'", c.line_of("fast", "kind"));
}

inline NoiseMaps noise_from_config(const Config& c) {
    NoiseMaps nm;
    const std::string kind = c.get_string("noise", "g1_kind", "constant");
    if (kind == "constant") nm.g1_kind = G1Kind::ConstantDiag;
    else if (kind == "state_lipschitz") nm.g1_kind = G1Kind::StateLipschitz;
    else throw ConfigError("unknown g1_kind '" + kind + "'", c.line_of("noise", "g1_kind"));
    nm.g1_sigma = c.get_list("noise", "g1_sigma", {1.0});
    nm.g1_lip = c.get_double("noise", "g1_lip", 0.0);
    nm.g2_sigma = c.get_list("noise", "g2_sigma", {0.0});
    return nm;
}

inline Grid grid_from_config(const Config& c) {
    const auto n = c.get_int("grid", "n_interior", 16);
    if (n < 1 || n > 4096) throw ConfigError("n_interior must lie in [1, 4096]", c.line_of("grid", "n_interior"));
    if (c.has("grid", "first_eigenvalue")) {
        if (c.has("grid", "length")) throw ConfigError("give either length or first_eigenvalue", c.line_of("grid", "length"));
        return Grid::with_first_eigenvalue(static_cast<int>(n), c.get_double("grid", "first_eigenvalue", 1.0));
    }
    return Grid(static_cast<int>(n), c.get_double("grid", "length", 1.0));
}

inline InitialSpec initial_from_config(const Config& c, const std::string& which) {
    InitialSpec s;
    s.kind = c.get_string("initial", which, "zero");
    s.value = c.get_double("initial", which + "_value", 0.0);
    const auto m = c.get_int("initial", which + "_mode", 1);
    if (s.kind != "zero" && s.kind != "constant" && s.kind != "mode")
        throw ConfigError("initial state must be zero, constant or mode", c.line_of("initial", which));
    if (m < 1) throw ConfigError("mode index is 1-based", c.line_of("initial", which + "_mode"));
    s.mode = static_cast<std::size_t>(m);
    return s;
}

inline GridFunction initial_state(const InitialSpec& s, const SpectralBasis& basis) {
    GridFunction u(basis.grid());
    if (s.kind == "constant") {
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = s.value;
    } else if (s.kind == "mode") {
        if (s.mode > basis.size()) throw Error("initial mode exceeds the number of grid modes");
        u = basis.mode_function(s.mode - 1);
        u *= s.value;
    }
    return u;
}

inline ControlKind control_kind(const std::string& v, int line) {
    if (v == "zero") return ControlKind::Zero;
    if (v == "constant") return ControlKind::Constant;
    if (v == "file") return ControlKind::File;
    if (v == "optimal") return ControlKind::Optimal;
    throw ConfigError("unknown control kind '" + v + "'", line);
}

}  // namespace detail

/// Builds and validates an experiment from a parsed config.
inline ExperimentConfig experiment_from_config(const Config& c) {
    c.check_schema(detail::config_schema());
    auto wrap = [&](const std::string& section, auto&& f) {
        try {
            return f();
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(e.what(), c.section_line(section));
        }
    };
    const Grid grid = wrap("grid", [&] { return detail::grid_from_config(c); });
    SlowOperator slow = wrap("slow", [&] { return detail::slow_from_config(c); });
    CouplingF1 coupling = wrap("coupling", [&] { return detail::coupling_from_config(c); });
    FastDrift fast = wrap("fast", [&] { return detail::fast_from_config(c); });
    NoiseMaps noise = wrap("noise", [&] { return detail::noise_from_config(c); });
    ExperimentConfig e(wrap("noise", [&] { return ModelSpec(grid, slow, coupling, fast, noise); }));

    // Scales.
    const auto eps = c.get_list("scales", "epsilon", {0.1});
    const int eps_line = c.line_of("scales", "epsilon");
    const int alpha_line = c.line_of("scales", "alpha");
    std::vector<double> alphas;
    const std::string alpha_raw = c.get_string("scales", "alpha", "auto");
    const double aexp = c.get_double("scales", "alpha_exponent", 1.5);
    if (alpha_raw == "auto") {
        for (double x : eps) alphas.push_back(std::pow(x, aexp));
    } else {
        alphas = c.get_list("scales", "alpha", {});
        if (alphas.size() == 1 && eps.size() > 1) alphas.assign(eps.size(), alphas[0]);
        if (alphas.size() != eps.size()) throw ConfigError("alpha list must match epsilon list", alpha_line);
    }
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (!(eps[i] > 0.0 && eps[i] <= 1.0)) throw ConfigError("epsilon must lie in (0, 1]", eps_line);
        if (!(alphas[i] > 0.0 && alphas[i] <= 1.0)) throw ConfigError("alpha must lie in (0, 1]", alpha_line);
        if (alphas[i] > eps[i]) throw ConfigError("scale point violates alpha <= epsilon", alpha_line);
        if (i > 0 && !(eps[i] < eps[i - 1])) throw ConfigError("epsilon values must be strictly decreasing", eps_line);
        e.points.push_back({eps[i], alphas[i]});
    }
    e.T = c.get_double("scales", "T", 1.0);
    if (!(e.T > 0.0)) throw ConfigError("T must be positive", c.line_of("scales", "T"));
    e.dt_max = c.get_double("scales", "dt", 0.0);
    e.delta = c.get_double("scales", "delta", 0.0);
    const auto records = c.get_int("scales", "records", 50);
    if (records < 1) throw ConfigError("records must be positive", c.line_of("scales", "records"));
    e.records = static_cast<std::size_t>(records);

    e.x0_spec = detail::initial_from_config(c, "x0");
    e.y0_spec = detail::initial_from_config(c, "y0");
    e.x0 = wrap("initial", [&] { return detail::initial_state(e.x0_spec, *e.model.basis); });
    e.y0 = wrap("initial", [&] { return detail::initial_state(e.y0_spec, *e.model.basis); });

    const std::string fk = c.get_string("event", "functional", "mode");
    if (fk == "mode") e.event_g.kind = TerminalFunctional::Kind::ModeCoefficient;
    else if (fk == "node") e.event_g.kind = TerminalFunctional::Kind::NodalValue;
    else if (fk == "mean") e.event_g.kind = TerminalFunctional::Kind::Mean;
    else throw ConfigError("unknown event functional '" + fk + "'", c.line_of("event", "functional"));
    const auto idx = c.get_int("event", "index", 1);
    if (idx < 1 || static_cast<std::size_t>(idx) > grid.size())
        throw ConfigError("event index out of range (1-based)", c.line_of("event", "index"));
    e.event_g.index = static_cast<std::size_t>(idx - 1);
    e.event_level = c.get_double("event", "level", 1.0);

    const auto ens = c.get_int("ensemble", "size", 100);
    if (ens < 1) throw ConfigError("ensemble size must be positive", c.line_of("ensemble", "size"));
    e.ensemble_size = static_cast<std::size_t>(ens);
    const std::string sampler = c.get_string("ensemble", "sampler", "naive");
    if (sampler == "naive") e.sampler = Sampler::Naive;
    else if (sampler == "girsanov") e.sampler = Sampler::Girsanov;
    else throw ConfigError("unknown sampler '" + sampler + "'", c.line_of("ensemble", "sampler"));
    e.tilt = detail::control_kind(c.get_string("ensemble", "tilt", "optimal"), c.line_of("ensemble", "tilt"));

    e.control.kind = detail::control_kind(c.get_string("control", "kind", "zero"), c.line_of("control", "kind"));
    e.control.value = c.get_double("control", "value", 0.0);
    const auto segs = c.get_int("control", "segments", 20);
    if (segs < 1) throw ConfigError("control segments must be positive", c.line_of("control", "segments"));
    e.control.segments = static_cast<std::size_t>(segs);
    e.control.file = c.get_string("control", "file", "");
    if (e.control.kind == ControlKind::File && e.control.file.empty())
        throw ConfigError("control kind 'file' needs a file", c.line_of("control", "kind"));

    const auto rsegs = c.get_int("rate", "segments", 50);
    if (rsegs < 1) throw ConfigError("rate segments must be positive", c.line_of("rate", "segments"));
    e.rate_segments = static_cast<std::size_t>(rsegs);
    e.rate_dt = c.get_double("rate", "dt", 1e-3);
    e.optimizer.initial_weight = c.get_double("rate", "initial_weight", 10.0);
    e.optimizer.constraint_tolerance = c.get_double("rate", "constraint_tolerance", 1e-4);
    e.optimizer.gradient_tolerance = c.get_double("rate", "gradient_tolerance", 1e-6);
    e.optimizer.max_iterations = static_cast<std::size_t>(c.get_int("rate", "max_iterations", 500));
    e.optimizer.max_continuation = static_cast<std::size_t>(c.get_int("rate", "max_continuation", 40));

    e.averaging_backend = c.get_string("averaging", "backend", "auto");
    if (e.averaging_backend != "auto" && e.averaging_backend != "analytic" && e.averaging_backend != "ergodic_mc")
        throw ConfigError("unknown averaging backend '" + e.averaging_backend + "'", c.line_of("averaging", "backend"));
    e.mc.replicas = static_cast<std::size_t>(c.get_int("averaging", "replicas", 20));
    e.mc.burn_in = c.get_double("averaging", "burn_in", 0.0);
    e.mc.sample_horizon = c.get_double("averaging", "sample_horizon", 0.0);
    e.mc.dt = c.get_double("averaging", "dt", 0.01);
    e.mc.tolerance = c.get_double("averaging", "tolerance", std::numeric_limits<double>::infinity());
    e.ergodic.replicas = static_cast<std::size_t>(c.get_int("averaging", "rate_replicas", 200));
    e.ergodic.horizon = c.get_double("averaging", "rate_horizon", 0.0);
    e.ergodic.dt = c.get_double("averaging", "rate_dt", 0.01);
    e.ergodic_start_offset = c.get_double("averaging", "start_offset", 5.0);

    e.skeleton_dt = c.get_double("skeleton", "dt", 1e-3);
    e.level_set_M = c.get_double("skeleton", "level_set_M", 4.0);
    e.level_set_samples = static_cast<std::size_t>(c.get_int("skeleton", "level_set_samples", 20));
    e.check_samples = static_cast<int>(c.get_int("checks", "samples", 500));
    e.check_max_norm = c.get_double("checks", "max_norm", 10.0);
    e.stop_N = c.get_double("stopping", "N", std::numeric_limits<double>::infinity());
    if (!(e.stop_N > 0.0)) throw ConfigError("stopping radius must be positive", c.line_of("stopping", "N"));

    const auto seed = c.get_int("run", "seed", 1);
    if (seed < 0) throw ConfigError("seed must be nonnegative", c.line_of("run", "seed"));
    e.seed = static_cast<std::uint64_t>(seed);
    const auto th = c.get_int("run", "threads", 1);
    if (th < 1) throw ConfigError("threads must be positive", c.line_of("run", "threads"));
    e.threads = static_cast<unsigned>(th);
    e.mc.seed = e.seed;
    e.mc.threads = e.threads;
    e.ergodic.seed = e.seed;
    e.ergodic.threads = e.threads;
    e.config_text = c.text();
    e.config_hash = c.hash();
    return e;
}

inline ExperimentConfig load_experiment(const std::string& path) { return experiment_from_config(Config::load(path)); }

// ---------------------------------------------------------------- shared pieces

/// T / (L k) with L = lcm(counts) and k the smallest integer giving a step <= target.
inline double aligned_dt(double T, double target, std::initializer_list<std::size_t> counts) {
    std::size_t L = 1;
    for (std::size_t c : counts) L = std::lcm(L, c);
    const double base = T / static_cast<double>(L);
    const double k = std::max(1.0, std::ceil(base / target - 1e-9));
    return base / k;
}

/// Scales of one point: dt is the largest step <= min(alpha/20, dt_max) dividing the recording interval.
inline ScaleParams scales_for(const ExperimentConfig& e, const ScalePoint& pt) {
    double target = pt.alpha / 20.0;
    if (e.dt_max > 0.0) target = std::min(target, e.dt_max);
    ScaleParams s;
    s.epsilon = pt.epsilon;
    s.alpha = pt.alpha;
    s.T = e.T;
    s.dt = aligned_dt(e.T, target, {e.records});
    const double rec = e.T / static_cast<double>(e.records);
    const double d = e.delta > 0.0 ? e.delta : std::sqrt(pt.alpha);
    s.delta = std::max(1.0, std::round(d / rec)) * rec;
    s.validate();
    return s;
}

inline std::size_t record_stride(const ExperimentConfig& e, const ScaleParams& s) {
    return static_cast<std::size_t>(std::llround(e.T / static_cast<double>(e.records) / s.dt));
}

inline std::shared_ptr<const AveragedDrift> make_drift(const ExperimentConfig& e) {
    if (e.averaging_backend == "analytic") return std::make_shared<const AveragedDrift>(AveragedDrift::analytic(e.model));
    if (e.averaging_backend == "ergodic_mc")
        return std::make_shared<const AveragedDrift>(AveragedDrift::ergodic_mc(e.model, e.mc));
    return std::make_shared<const AveragedDrift>(AveragedDrift::automatic(e.model, e.mc));
}

/// Skeleton template on the experiment's recording grid for a control with `segments` uniform pieces.
inline SkeletonProblem skeleton_template(const ExperimentConfig& e, const ControlPath& phi, double target_dt) {
    std::size_t segs = phi.segments();
    bool uniform = true;
    for (std::size_t j = 0; j < segs; ++j)
        uniform = uniform && std::abs(phi.segment_length(j) - e.T / static_cast<double>(segs)) < 1e-12 * e.T;
    const double dt = uniform ? aligned_dt(e.T, target_dt, {e.records, segs}) : target_dt;
    SkeletonProblem p(e.model, make_drift(e), phi, e.x0, dt);
    p.record_stride = static_cast<std::size_t>(std::llround(e.T / static_cast<double>(e.records) / dt));
    return p;
}

inline RateProblem rate_problem(const ExperimentConfig& e) {
    const ControlPath phi0 = ControlPath::uniform(e.T, e.rate_segments, e.model.modes());
    SkeletonProblem sp = skeleton_template(e, phi0, e.rate_dt);
    sp.record_stride = 1;
    return RateProblem{sp, TerminalSetTarget{e.event_g, e.event_level}, e.optimizer};
}

/// The configured control path (the optimal one is computed by the rate module).
inline ControlPath build_control(const ExperimentConfig& e, ControlKind kind) {
    const std::size_t K = e.model.modes();
    switch (kind) {
        case ControlKind::Zero:
            return ControlPath::uniform(e.T, e.control.segments, K);
        case ControlKind::Constant: {
            ControlPath p = ControlPath::uniform(e.T, e.control.segments, K);
            for (double& c : p.flat()) c = e.control.value;
            return p;
        }
        case ControlKind::File: {
            std::ifstream f(e.control.file);
            if (!f) throw ConfigError("cannot open control file '" + e.control.file + "'");
            ControlPath p = ControlPath::read_csv(f);
            if (p.modes() != K) throw ConfigError("control file has the wrong number of modes");
            if (std::abs(p.horizon() - e.T) > 1e-9 * e.T) throw ConfigError("control file horizon differs from T");
            return p;
        }
        case ControlKind::Optimal: {
            const RateProblem rp = rate_problem(e);
            const RateResult r = minimize_rate(rp, rp.skeleton.phi);
            if (!r.feasible) throw Error("optimal control requested but the rate problem is infeasible");
            return r.phi_star;
        }
    }
    return ControlPath::uniform(e.T, 1, K);
}

// ---------------------------------------------------------------- weak convergence

struct ConvergenceRow {
    double epsilon = 0.0;
    double alpha = 0.0;
    std::size_t n = 0;
    std::size_t failed = 0;
    double mean_metric = 0.0;
    double stderr_ = 0.0;
};

struct ConvergenceTable {
    std::vector<ConvergenceRow> rows;
    bool monotone = true;
    double fitted_exponent = std::numeric_limits<double>::quiet_NaN();  ///< slope of log metric vs log epsilon
};

/// Mean path_metric between controlled trajectories and the skeleton at every scale point.
inline ConvergenceTable weak_convergence_experiment(const ExperimentConfig& e, const ControlPath& phi) {
    const SkeletonProblem sp = skeleton_template(e, phi, e.skeleton_dt);
    const SlowPath skel = solve_skeleton(sp);
    const auto norms = e.model.slow_norms();
    const double gamma = e.model.slow.gamma1();
    ConvergenceTable table;
    for (std::size_t ip = 0; ip < e.points.size(); ++ip) {
        const ScaleParams s = scales_for(e, e.points[ip]);
        RunOptions opts{record_stride(e, s), false};
        const SeedSpec seed{e.seed + 1000003ULL * ip};
        auto metrics = parallel_map(e.ensemble_size, e.threads, [&](std::size_t i) -> double {
            Stream st = seed.stream(i, purpose::trajectory);
            const Trajectory tr = run_trajectory(e.model, s, e.x0, e.y0, &phi, StoppingSpec{}, st, opts);
            if (tr.failed) return std::numeric_limits<double>::quiet_NaN();
            return path_metric(tr.slow_path(), skel, gamma, norms, *e.model.basis);
        });
        ConvergenceRow row{s.epsilon, s.alpha, 0, 0, 0.0, 0.0};
        double sum = 0.0, sq = 0.0;
        for (double m : metrics) {
            if (std::isnan(m)) {
                ++row.failed;
                continue;
            }
            ++row.n;
            sum += m;
            sq += m * m;
        }
        if (row.n > 0) {
            row.mean_metric = sum / static_cast<double>(row.n);
            const double var = row.n > 1 ? (sq - row.n * row.mean_metric * row.mean_metric) / (row.n - 1.0) : 0.0;
            row.stderr_ = std::sqrt(std::max(0.0, var) / static_cast<double>(row.n));
        }
        table.rows.push_back(row);
    }
    for (std::size_t i = 1; i < table.rows.size(); ++i)
        table.monotone = table.monotone && table.rows[i].mean_metric < table.rows[i - 1].mean_metric;
    if (table.rows.size() >= 2) {
        double mx = 0.0, my = 0.0;
        const double n = static_cast<double>(table.rows.size());
        for (const auto& r : table.rows) {
            mx += std::log(r.epsilon) / n;
            my += std::log(r.mean_metric) / n;
        }
        double sxy = 0.0, sxx = 0.0;
        for (const auto& r : table.rows) {
            sxy += (std::log(r.epsilon) - mx) * (std::log(r.mean_metric) - my);
            sxx += (std::log(r.epsilon) - mx) * (std::log(r.epsilon) - mx);
        }
        table.fitted_exponent = sxy / sxx;
    }
    return table;
}

// ---------------------------------------------------------------- event probabilities

struct ProbabilityEstimate {
    double epsilon = 0.0;
    double alpha = 0.0;
    std::size_t n = 0;
    std::size_t hits = 0;
    std::size_t failed = 0;
    double p = 0.0;
    double stderr_ = 0.0;
    double lo = 0.0;  ///< 95% interval (Wilson for the naive sampler)
    double hi = 1.0;
    bool unresolved = false;
};

inline std::pair<double, double> wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
    if (n == 0) return {0.0, 1.0};
    const double N = static_cast<double>(n);
    const double p = static_cast<double>(hits) / N;
    const double den = 1.0 + z * z / N;
    const double centre = (p + z * z / (2.0 * N)) / den;
    const double half = z * std::sqrt(p * (1.0 - p) / N + z * z / (4.0 * N * N)) / den;
    return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == n ? 1.0 : std::min(1.0, centre + half)};
}

/// Estimates P(g(X_T) >= level) at one scale point; `tilt` is required for the Girsanov sampler.
inline ProbabilityEstimate estimate_event_probability(const ExperimentConfig& e, const ScalePoint& pt, Sampler sampler,
                                                      const ControlPath* tilt, std::uint64_t stream_offset = 0) {
    ProbabilityEstimate est;
    est.epsilon = pt.epsilon;
    est.alpha = pt.alpha;
    est.n = e.ensemble_size;
    if (e.event_level == -std::numeric_limits<double>::infinity()) {
        est.hits = est.n;
        est.p = 1.0;
        est.lo = est.hi = 1.0;
        return est;
    }
    if (e.ensemble_size < 100) throw Error("estimate_event_probability: ensemble size must be at least 100");
    if (sampler == Sampler::Girsanov && !tilt) throw Error("estimate_event_probability: girsanov sampler needs a tilt");
    const ScaleParams s = scales_for(e, pt);
    const RunOptions opts{s.steps(), false};
    const SeedSpec seed{e.seed + stream_offset};
    const StoppingSpec stop{e.stop_N, StopMode::Tau, nullptr};
    struct Sample {
        bool hit = false;
        bool failed = false;
        double weight = 0.0;
    };
    auto samples = parallel_map(e.ensemble_size, e.threads, [&](std::size_t i) {
        Stream st = seed.stream(i, purpose::trajectory);
        const Trajectory tr = run_trajectory(e.model, s, e.x0, e.y0, sampler == Sampler::Girsanov ? tilt : nullptr,
                                             stop, st, opts);
        Sample out;
        out.failed = tr.failed;
        const bool reached = !tr.failed && tr.exit_time >= e.T;
        out.hit = reached && e.event_g.value(tr.slow.back(), *e.model.basis) >= e.event_level;
        out.weight = out.hit ? std::exp(tr.final_log_weight()) : 0.0;
        return out;
    });
    double sum = 0.0, sq = 0.0;
    for (const auto& smp : samples) {
        est.hits += smp.hit;
        est.failed += smp.failed;
        sum += smp.weight;
        sq += smp.weight * smp.weight;
    }
    const double N = static_cast<double>(est.n);
    if (sampler == Sampler::Naive) {
        est.p = static_cast<double>(est.hits) / N;
        est.stderr_ = std::sqrt(est.p * (1.0 - est.p) / N);
        std::tie(est.lo, est.hi) = wilson_interval(est.hits, est.n);
    } else {
        est.p = sum / N;
        const double var = est.n > 1 ? std::max(0.0, (sq - N * est.p * est.p) / (N - 1.0)) : 0.0;
        est.stderr_ = std::sqrt(var / N);
        est.lo = std::max(0.0, est.p - 1.959963984540054 * est.stderr_);
        est.hi = est.p + 1.959963984540054 * est.stderr_;
    }
    if (est.hits == 0) {
        est.unresolved = true;
        est.hi = wilson_interval(0, est.n).second;
    }
    return est;
}

// ---------------------------------------------------------------- LDP fit

struct LdpFitReport {
    std::vector<ProbabilityEstimate> estimates;
    std::vector<double> y;  ///< epsilon log p per used point
    std::size_t points_used = 0;
    double I_fit = std::numeric_limits<double>::quiet_NaN();
    double slope = std::numeric_limits<double>::quiet_NaN();
    double band_lo = std::numeric_limits<double>::quiet_NaN();
    double band_hi = std::numeric_limits<double>::quiet_NaN();
    double I_reference = std::numeric_limits<double>::quiet_NaN();
    double relative_gap = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> warnings;
};

/// Fits epsilon log p(epsilon) = -I_inf + b epsilon and compares I_inf with the rate module.
inline LdpFitReport ldp_scaling_fit(const ExperimentConfig& e) {
    LdpFitReport rep;
    const RateProblem rp = rate_problem(e);
    const RateResult rr = minimize_rate(rp, rp.skeleton.phi);
    rep.I_reference = rr.I_value;
    std::optional<ControlPath> tilt;
    if (e.sampler == Sampler::Girsanov) {
        if (e.tilt == ControlKind::Optimal) {
            if (!rr.feasible) throw Error("ldp_scaling_fit: rate problem infeasible, no tilt available");
            tilt = rr.phi_star;
        } else {
            tilt = build_control(e, e.tilt);
        }
    }
    for (std::size_t i = 0; i < e.points.size(); ++i)
        rep.estimates.push_back(
            estimate_event_probability(e, e.points[i], e.sampler, tilt ? &*tilt : nullptr, 7919ULL * (i + 1)));

    std::vector<double> xs, ys, vs;
    for (const auto& est : rep.estimates) {
        if (est.unresolved || !(est.p > 0.0)) {
            rep.warnings.push_back("unresolved probability at epsilon=" + std::to_string(est.epsilon) + "; fit truncated");
            break;
        }
        xs.push_back(est.epsilon);
        ys.push_back(est.epsilon * std::log(est.p));
        const double rel = est.stderr_ / est.p;
        vs.push_back(est.epsilon * est.epsilon * rel * rel);
    }
    rep.y = ys;
    rep.points_used = xs.size();
    if (xs.size() < 2) throw Error("ldp_scaling_fit: fewer than two resolved probabilities");
    if (xs.size() < 3) rep.warnings.push_back("fit uses fewer than three points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    rep.slope = sxy / sxx;
    const double intercept = my - rep.slope * mx;
    rep.I_fit = -intercept;
    // Intercept = sum_i c_i y_i with c_i = 1/n - mx (x_i - mx)/sxx.
    double var = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double ci = 1.0 / n - mx * (xs[i] - mx) / sxx;
        var += ci * ci * vs[i];
    }
    const double half = 1.959963984540054 * std::sqrt(var);
    rep.band_lo = rep.I_fit - half;
    rep.band_hi = rep.I_fit + half;
    if (std::isfinite(rep.I_reference))
        rep.relative_gap = rep.I_reference > 0.0 ? std::abs(rep.I_fit - rep.I_reference) / rep.I_reference
                                                 : std::abs(rep.I_fit);
    return rep;
}

// ---------------------------------------------------------------- result files

/// Outcome of one subcommand: exit code, scalar report fields and written files.
struct RunOutcome {
    int exit_code = 0;
    std::map<std::string, double> report;
    std::vector<std::string> files;
    std::vector<std::string> findings;
};

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& dir, const std::string& name, RunOutcome& out)
        : os_(dir / name, std::ios::binary) {
        if (!os_) throw Error("cannot write " + (dir / name).string());
        os_ << std::setprecision(17);
        out.files.push_back(name);
    }
    std::ofstream& os() { return os_; }
    template <class... Ts>
    void row(const Ts&... xs) {
        bool first = true;
        ((os_ << (first ? "" : ",") << xs, first = false), ...);
        os_ << "\n";
    }

private:
    std::ofstream os_;
};

inline void write_manifest(const std::filesystem::path& dir, const std::string& subcommand, const ExperimentConfig& e,
                           const RunOutcome& out) {
    std::ofstream m(dir / "manifest.txt", std::ios::binary);
    if (!m) throw Error("cannot write manifest");
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << e.config_hash;
    m << "tool = msldp\nversion = " << kVersion << "\nsubcommand = " << subcommand << "\nconfig_hash = fnv1a64:"
      << hash.str() << "\nseed = " << e.seed << "\n";
    for (const auto& f : out.files) m << "file = " << f << "\n";
    for (const auto& f : out.findings) m << "finding = " << f << "\n";
}

// ---------------------------------------------------------------- subcommands

inline RunOutcome run_simulate(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const ScaleParams s = scales_for(e, e.points.front());
    const std::size_t stride = record_stride(e, s);
    std::optional<ControlPath> phi;
    if (e.control.kind != ControlKind::Zero) phi = build_control(e, e.control.kind);
    const SeedSpec seed{e.seed};
    const StoppingSpec stop{e.stop_N, StopMode::Tau, nullptr};
    const auto norms = e.model.slow_norms();
    struct Summary {
        Trajectory tr;
        double increment = 0.0;
        double aux_gap = 0.0;
        double y_second_moment = 0.0;
    };
    auto runs = parallel_map(e.ensemble_size, e.threads, [&](std::size_t i) {
        Stream st = seed.stream(i, purpose::trajectory);
        Summary sm{run_trajectory(e.model, s, e.x0, e.y0, phi ? &*phi : nullptr, stop, st, RunOptions{stride, true})};
        if (!sm.tr.failed) {
            sm.increment = time_increment_statistic(sm.tr, s.delta, e.model);
            if (!phi && sm.tr.exit_time >= e.T) {
                Stream st2 = seed.stream(i, purpose::trajectory);
                const Trajectory aux = run_auxiliary(e.model, s, sm.tr.slow_path(), e.y0, st2, stride);
                for (std::size_t j = 0; j + 1 < aux.fast.size(); ++j) {
                    const double d = norm_h(sm.tr.fast[j] - aux.fast[j]);
                    sm.aux_gap += (aux.times[j + 1] - aux.times[j]) * d * d;
                }
            }
            for (std::size_t j = 0; j + 1 < sm.tr.fast.size(); ++j) {
                const double d = norm_h(sm.tr.fast[j]);
                sm.y_second_moment += (sm.tr.times[j + 1] - sm.tr.times[j]) * d * d / e.T;
            }
        }
        return sm;
    });
    {
        CsvWriter w(dir, "trajectory.csv", out);
        write_trajectory_csv(w.os(), runs.front().tr, e.model);
    }
    CsvWriter w(dir, "ensemble.csv", out);
    w.row("index", "exit_time", "failed", "x_norm_h_T", "g_T", "log_girsanov_T", "time_increment", "aux_gap");
    double failed = 0, exit_sum = 0, xn = 0, wsum = 0, inc = 0, aux = 0, ym = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& r = runs[i];
        const double nx = norms.norm_h(r.tr.slow.back(), *e.model.basis);
        w.row(i, r.tr.exit_time, r.tr.failed ? 1 : 0, nx, e.event_g.value(r.tr.slow.back(), *e.model.basis),
              r.tr.final_log_weight(), r.increment, r.aux_gap);
        failed += r.tr.failed;
        exit_sum += r.tr.exit_time;
        xn += nx;
        wsum += std::exp(r.tr.final_log_weight());
        inc += r.increment;
        aux += r.aux_gap;
        ym += r.y_second_moment;
    }
    const double n = static_cast<double>(runs.size());
    out.report = {{"n", n},
                  {"failed", failed},
                  {"mean_exit_time", exit_sum / n},
                  {"mean_x_norm_T", xn / n},
                  {"mean_girsanov_weight", wsum / n},
                  {"time_increment", inc / n},
                  {"aux_gap", aux / n},
                  {"fast_second_moment", ym / n}};
    if (failed > 0) out.findings.push_back("trajectories left the overflow ball");
    return out;
}

inline RunOutcome run_average_drift(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const auto drift = make_drift(e);
    const auto v = drift->evaluate(e.x0);
    {
        CsvWriter w(dir, "averaged_drift.csv", out);
        w.row("node", "value", "stderr");
        for (std::size_t i = 0; i < v.mean.size(); ++i) w.row(i, v.mean[i], v.stderr_[i]);
    }
    out.report["drift_norm"] = norm_h(v.mean);
    out.report["stderr_norm"] = v.stderr_norm;
    out.report["declared_lipschitz"] = drift->declared_lipschitz();
    if (drift->backend() == DriftBackend::ErgodicMC && e.model.fast.is_linear_ou() && e.model.coupling.is_linear()) {
        const auto exact = AveragedDrift::analytic(e.model).evaluate(e.x0).mean;
        out.report["analytic_gap_in_stderr"] = v.stderr_norm > 0.0 ? norm_h(v.mean - exact) / v.stderr_norm : 0.0;
    }
    // Ergodic rate of the first mode coefficient from starts offset around the origin.
    const auto& basis = *e.model.basis;
    GridFunction up = basis.mode_function(0), dn = basis.mode_function(0);
    up *= e.ergodic_start_offset;
    dn *= -e.ergodic_start_offset;
    auto f = [&basis](const GridFunction& y) { return inner_h(y, basis.mode_function(0)); };
    const auto fit = measure_ergodic_rate(e.model, e.x0, f, {up, dn}, e.ergodic);
    {
        CsvWriter w(dir, "ergodic_rate.csv", out);
        w.row("t", "residual_up", "stderr_up", "residual_down", "stderr_down");
        for (std::size_t n = 0; n < fit.times.size(); ++n)
            w.row(fit.times[n], fit.residual[0][n], fit.stderr_[0][n], fit.residual[1][n], fit.stderr_[1][n]);
    }
    out.report["ergodic_slope"] = fit.slope;
    out.report["ergodic_points"] = static_cast<double>(fit.points_used);
    out.report["kappa_half"] = 0.5 * e.model.constants.kappa;
    if (!fit.decaying) {
        out.findings.push_back("ergodic rate fit is not decaying");
        out.exit_code = 2;
    }
    return out;
}

inline void write_path_csv(std::ostream& os, const SlowPath& p, const ModelSpec& model) {
    const auto norms = model.slow_norms();
    os << "t,norm_h,norm_v";
    for (std::size_t i = 0; i < model.grid.size(); ++i) os << ",x" << (i + 1);
    os << "\n" << std::setprecision(17);
    for (std::size_t j = 0; j < p.size(); ++j) {
        os << p.times[j] << "," << norms.norm_h(p.states[j], *model.basis) << "," << norms.norm_v(p.states[j]);
        for (double v : p.states[j].values()) os << "," << v;
        os << "\n";
    }
}

inline RunOutcome run_skeleton(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const ControlPath phi = build_control(e, e.control.kind);
    const SkeletonProblem sp = skeleton_template(e, phi, e.skeleton_dt);
    const SlowPath path = solve_forward_map(phi, sp);
    {
        CsvWriter w(dir, "skeleton.csv", out);
        write_path_csv(w.os(), path, e.model);
    }
    const auto norms = e.model.slow_norms();
    out.report["terminal_norm"] = norms.norm_h(path.states.back(), *e.model.basis);
    out.report["energy"] = path_energy(path, e.model);
    out.report["control_energy"] = control_energy(phi);
    if (e.level_set_M > 0.0 && e.level_set_samples > 0) {
        ControlPath z = ControlPath::uniform(e.T, e.control.segments, e.model.modes());
        const SkeletonProblem lt = skeleton_template(e, z, e.skeleton_dt);
        const auto rep = level_set_sample(e.level_set_M, e.level_set_samples, lt, e.seed,
                                          e.model.slow.uses_a4() ? MetricChoice::COnly : MetricChoice::Full, e.threads);
        CsvWriter w(dir, "level_set.csv", out);
        w.row("sample", "energy");
        for (std::size_t i = 0; i < rep.energies.size(); ++i) w.row(i, rep.energies[i]);
        out.report["level_set_max_energy"] = rep.max_energy;
        out.report["level_set_C"] = rep.fitted_C();
        out.report["level_set_diameter"] = rep.diameter;
        out.report["level_set_blowups"] = static_cast<double>(rep.blowups);
        if (rep.blowups > 0) {
            out.findings.push_back("skeleton blow-up inside the control level set");
            out.exit_code = 2;
        }
    }
    return out;
}

inline RunOutcome run_rate(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const RateProblem rp = rate_problem(e);
    const RateResult r = minimize_rate(rp, rp.skeleton.phi);
    {
        CsvWriter w(dir, "rate.csv", out);
        w.row("I", "residual", "iterations", "feasible", "final_weight");
        w.row(r.I_value, r.residual, r.iterations, r.feasible ? 1 : 0, r.final_weight);
    }
    {
        CsvWriter w(dir, "phi_star.csv", out);
        r.phi_star.write_csv(w.os());
    }
    out.report = {{"I", r.I_value},
                  {"residual", r.residual},
                  {"iterations", static_cast<double>(r.iterations)},
                  {"feasible", r.feasible ? 1.0 : 0.0}};
    if (!r.feasible) out.findings.push_back("rate problem infeasible: I = +inf");
    return out;
}

inline RunOutcome run_validate_ldp(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const LdpFitReport rep = ldp_scaling_fit(e);
    {
        CsvWriter w(dir, "probabilities.csv", out);
        w.row("epsilon", "alpha", "n", "hits", "p_hat", "stderr", "lo", "hi");
        for (const auto& p : rep.estimates) w.row(p.epsilon, p.alpha, p.n, p.hits, p.p, p.stderr_, p.lo, p.hi);
    }
    {
        CsvWriter w(dir, "ldp_fit.csv", out);
        w.row("I_fit", "band_lo", "band_hi", "slope", "I_reference", "relative_gap", "points_used");
        w.row(rep.I_fit, rep.band_lo, rep.band_hi, rep.slope, rep.I_reference, rep.relative_gap, rep.points_used);
    }
    out.report = {{"I_fit", rep.I_fit},
                  {"I_reference", rep.I_reference},
                  {"relative_gap", rep.relative_gap},
                  {"band_width", rep.band_hi - rep.band_lo},
                  {"points_used", static_cast<double>(rep.points_used)}};
    for (const auto& w : rep.warnings) out.findings.push_back(w);
    return out;
}

inline RunOutcome run_weak_convergence(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const ControlPath phi = build_control(e, e.control.kind);
    const ConvergenceTable t = weak_convergence_experiment(e, phi);
    {
        CsvWriter w(dir, "convergence.csv", out);
        w.row("epsilon", "alpha", "n", "failed", "mean_metric", "stderr");
        for (const auto& r : t.rows) w.row(r.epsilon, r.alpha, r.n, r.failed, r.mean_metric, r.stderr_);
    }
    out.report = {{"metric_first", t.rows.front().mean_metric},
                  {"metric_last", t.rows.back().mean_metric},
                  {"ratio", t.rows.back().mean_metric / t.rows.front().mean_metric},
                  {"monotone", t.monotone ? 1.0 : 0.0},
                  {"fitted_exponent", t.fitted_exponent}};
    if (!t.monotone) {
        out.findings.push_back("mean path metric is not decreasing in epsilon");
        out.exit_code = 2;
    }
    return out;
}

inline RunOutcome run_check_conditions(const ExperimentConfig& e, const std::filesystem::path& dir) {
    RunOutcome out;
    const auto summary = check_conditions(e.model, e.check_samples, e.seed, e.check_max_norm);
    CsvWriter w(dir, "conditions.csv", out);
    w.row("check", "samples", "violations", "skipped", "worst");
    double violations = 0;
    for (const auto& s : summary) {
        w.row(s.check, s.samples, s.violations, s.skipped, s.worst);
        violations += s.violations;
        if (s.violations > 0) out.findings.push_back(s.check + " violated " + std::to_string(s.violations) + " times");
    }
    out.report = {{"violations", violations}, {"checks", static_cast<double>(summary.size())}};
    if (violations > 0) out.exit_code = 2;
    return out;
}

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> s{"simulate", "average-drift", "skeleton", "rate",
                                            "validate-ldp", "weak-convergence", "check-conditions"};
    return s;
}

/// Runs one subcommand, writing its CSVs and manifest into `dir`.
inline RunOutcome run_subcommand(const std::string& name, const ExperimentConfig& e, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    RunOutcome out;
    if (name == "simulate") out = run_simulate(e, dir);
    else if (name == "average-drift") out = run_average_drift(e, dir);
    else if (name == "skeleton") out = run_skeleton(e, dir);
    else if (name == "rate") out = run_rate(e, dir);
    else if (name == "validate-ldp") out = run_validate_ldp(e, dir);
    else if (name == "weak-convergence") out = run_weak_convergence(e, dir);
    else if (name == "check-conditions") out = run_check_conditions(e, dir);
    else throw Error("unknown subcommand '" + name + "'");
    if (!out.findings.empty()) out.exit_code = 2;
    write_manifest(dir, name, e, out);
    return out;
}

}  // namespace msldp
