// Copyright 2026 The msldp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msldp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two objects that must live on the same grid (or time grid) do not.
class GridMismatch : public Error {
public:
    using Error::Error;
};

/// A numerical evaluation produced a non-finite value.
///
/// `index()` is the offending node (operator evaluation) or micro step
/// (time integration), depending on where it was raised.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::size_t index)
        : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// A deterministic solve left the admissible region. Carries the failure time.
class BlowUp : public Error {
public:
    BlowUp(const std::string& what, double time)
        : Error(what + " at t=" + std::to_string(time)), time_(time) {}

    double time() const noexcept { return time_; }

private:
    double time_;
};

/// Bad configuration, with an optional 1-based line number.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, int line = 0)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace msldp
