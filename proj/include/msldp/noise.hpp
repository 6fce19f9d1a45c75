// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

// Truncated cylindrical Wiener process, deterministic piecewise-constant
// controls and the reproducible randomness contract.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "msldp/error.hpp"
#include "msldp/space.hpp"

namespace msldp {

/// The first K sine modes of the slow grid span the image of U.
struct NoiseTruncation {
    Grid grid;
    std::size_t n_modes;

    NoiseTruncation(const Grid& g, std::size_t k) : grid(g), n_modes(k) {
        if (k == 0 || k > g.size()) throw Error("NoiseTruncation: need 1 <= n_modes <= n_interior");
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace detail

/// Gaussian source owned by exactly one trajectory.
class Stream {
public:
    explicit Stream(std::uint64_t key) : engine_(key) {}

    double normal() { return gauss_(engine_); }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

/// Master seed; substream (seed, index, purpose) is derived by counter hashing.
struct SeedSpec {
    std::uint64_t master_seed = 0;

    Stream stream(std::uint64_t index, std::uint64_t purpose = 0) const {
        std::uint64_t k = detail::splitmix64(master_seed);
        k = detail::splitmix64(k ^ detail::splitmix64(index + 0x632be59bd9b4e019ULL));
        k = detail::splitmix64(k ^ detail::splitmix64(purpose + 0x8cb92ba72f3d8dd7ULL));
        return Stream(k);
    }
};

/// Stream purposes, so that independent uses of one (seed, index) never collide.
namespace purpose {
inline constexpr std::uint64_t trajectory = 0;
inline constexpr std::uint64_t frozen = 1;
inline constexpr std::uint64_t stationary = 2;
inline constexpr std::uint64_t sampling = 3;
}  // namespace purpose

/// n_steps Wiener increments in the K truncated directions, each N(0, dt).
inline std::vector<std::vector<double>> wiener_increments(const NoiseTruncation& trunc, double dt,
                                                          std::size_t n_steps, Stream& stream) {
    if (!(dt > 0.0)) throw Error("wiener_increments: dt must be positive");
    const double s = std::sqrt(dt);
    std::vector<std::vector<double>> out(n_steps, std::vector<double>(trunc.n_modes));
    for (auto& step : out)
        for (double& x : step) x = s * stream.normal();
    return out;
}

/// Piecewise-constant U-valued control: on [t_j, t_{j+1}) the mode coefficients are row j.
class ControlPath {
public:
    ControlPath(std::vector<double> times, std::size_t n_modes)
        : times_(std::move(times)), k_(n_modes), coeffs_((times_.empty() ? 0 : times_.size() - 1) * n_modes, 0.0) {
        validate();
    }
    ControlPath(std::vector<double> times, std::size_t n_modes, std::vector<double> coeffs)
        : times_(std::move(times)), k_(n_modes), coeffs_(std::move(coeffs)) {
        validate();
    }

    /// m equal segments on [0, T].
    static ControlPath uniform(double T, std::size_t segments, std::size_t n_modes) {
        if (segments == 0 || !(T > 0.0)) throw Error("ControlPath: need T > 0 and at least one segment");
        std::vector<double> t(segments + 1);
        for (std::size_t j = 0; j <= segments; ++j) t[j] = T * static_cast<double>(j) / static_cast<double>(segments);
        return ControlPath(std::move(t), n_modes);
    }

    std::size_t segments() const noexcept { return times_.size() - 1; }
    std::size_t modes() const noexcept { return k_; }
    const std::vector<double>& times() const noexcept { return times_; }
    double horizon() const noexcept { return times_.back(); }
    double segment_length(std::size_t j) const { return times_[j + 1] - times_[j]; }

    double& coeff(std::size_t j, std::size_t k) { return coeffs_[j * k_ + k]; }
    double coeff(std::size_t j, std::size_t k) const { return coeffs_[j * k_ + k]; }
    std::span<const double> row(std::size_t j) const { return {coeffs_.data() + j * k_, k_}; }
    std::vector<double>& flat() noexcept { return coeffs_; }
    const std::vector<double>& flat() const noexcept { return coeffs_; }

    /// Segment containing t (the last segment is closed on the right).
    std::size_t segment_at(double t) const {
        auto it = std::upper_bound(times_.begin(), times_.end(), t);
        std::size_t j = it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin()) - 1;
        return std::min(j, segments() - 1);
    }
    std::span<const double> at(double t) const { return row(segment_at(t)); }

    /// int_0^T ||phi_s||^2 ds.
    double squared_l2() const {
        double s = 0.0;
        for (std::size_t j = 0; j < segments(); ++j) {
            double r = 0.0;
            for (double c : row(j)) r += c * c;
            s += segment_length(j) * r;
        }
        return s;
    }

    ControlPath& operator*=(double s) {
        for (double& c : coeffs_) c *= s;
        return *this;
    }

    void write_csv(std::ostream& os) const {
        os << "t";
        for (std::size_t k = 0; k < k_; ++k) os << ",c" << (k + 1);
        os << "\n";
        os << std::setprecision(17);
        for (std::size_t j = 0; j < segments(); ++j) {
            os << times_[j];
            for (double c : row(j)) os << "," << c;
            os << "\n";
        }
        os << times_.back();
        for (std::size_t k = 0; k < k_; ++k) os << "," << 0.0;
        os << "\n";
    }

    /// Reads the format of write_csv: header, one row per segment start, final row at T.
    static ControlPath read_csv(std::istream& is) {
        std::string line;
        if (!std::getline(is, line)) throw ConfigError("control CSV: missing header", 1);
        std::size_t cols = 0;
        for (char ch : line) cols += ch == ',';
        if (cols == 0) throw ConfigError("control CSV: header needs at least one coefficient column", 1);
        std::vector<double> t, c;
        int lineno = 1;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<double> row;
            while (std::getline(ss, cell, ',')) {
                try {
                    std::size_t pos = 0;
                    row.push_back(std::stod(cell, &pos));
                } catch (const std::exception&) {
                    throw ConfigError("control CSV: bad number '" + cell + "'", lineno);
                }
            }
            if (row.size() != cols + 1) throw ConfigError("control CSV: wrong column count", lineno);
            t.push_back(row[0]);
            c.insert(c.end(), row.begin() + 1, row.end());
        }
        if (t.size() < 2) throw ConfigError("control CSV: need at least two time rows", lineno);
        c.resize((t.size() - 1) * cols);
        return ControlPath(std::move(t), cols, std::move(c));
    }

private:
    void validate() const {
        if (times_.size() < 2) throw Error("ControlPath: need at least one segment");
        if (times_.front() != 0.0) throw Error("ControlPath: times must start at 0");
        for (std::size_t j = 0; j + 1 < times_.size(); ++j)
            if (!(times_[j + 1] > times_[j])) throw Error("ControlPath: times must increase");
        if (k_ == 0) throw Error("ControlPath: need at least one mode");
        if (coeffs_.size() != segments() * k_) throw Error("ControlPath: coefficient count mismatch");
        for (double c : coeffs_)
            if (!std::isfinite(c)) throw Error("ControlPath: non-finite coefficient");
    }

    std::vector<double> times_;
    std::size_t k_;
    std::vector<double> coeffs_;
};

/// 1/2 int_0^T ||phi_s||^2 ds, exact for piecewise-constant controls.
inline double control_energy(const ControlPath& phi) { return 0.5 * phi.squared_l2(); }

/// Scales phi onto {int ||phi||^2 <= M} when it lies outside.
inline ControlPath project_to_ball(const ControlPath& phi, double M) {
    if (!(M > 0.0)) throw Error("project_to_ball: M must be positive");
    const double e = phi.squared_l2();
    ControlPath out = phi;
    if (e > M * (1.0 + 1e-13)) out *= std::sqrt(M / e);
    return out;
}

}  // namespace msldp
