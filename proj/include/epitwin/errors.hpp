// Copyright (c) 2026, the epitwin authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace epitwin {

/// Input outside the mathematical domain of an operation (non-finite values,
/// zero regulariser, bad parameter ranges).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Tensor / matrix shapes that do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative method ran out of iterations before meeting its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, int iterations, double last_change)
        : std::runtime_error(what), iterations_(iterations), last_change_(last_change) {}

    int iterations() const noexcept { return iterations_; }
    double last_change() const noexcept { return last_change_; }

private:
    int iterations_;
    double last_change_;
};

/// Configuration value rejected by validation. `key()` is the dotted path.
class ValidationError : public std::invalid_argument {
public:
    ValidationError(std::string key, const std::string& what)
        : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// File-format problems (malformed CSV, bad container header, ...).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace epitwin
