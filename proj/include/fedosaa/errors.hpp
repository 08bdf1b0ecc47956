#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace fedosaa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed LIBSVM input. `line()` is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Invalid experiment / partition / solver parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(const std::string& where, std::size_t expected, std::size_t got)
        : Error(where + ": expected dimension " + std::to_string(expected) + ", got " +
                std::to_string(got)) {}
};

/// Non-finite input or intermediate value.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A Krylov solver could not continue; carries the last finite iterate.
class SolverBreakdown : public NumericalError {
public:
    SolverBreakdown(const std::string& what, Vector last_iterate, int iteration)
        : NumericalError(what), last_(std::move(last_iterate)), iteration_(iteration) {}

    const Vector& last_iterate() const noexcept { return last_; }
    int iteration() const noexcept { return iteration_; }

private:
    Vector last_;
    int iteration_;
};

/// AA history without any usable (nonzero, independent) residual difference.
class DegenerateHistory : public Error {
public:
    using Error::Error;
};

/// Iterate blew up. `step()` is the local step or round index where it happened.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int step) : Error(what), step_(step) {}

    int step() const noexcept { return step_; }

private:
    int step_;
};

/// An inner Newton solve hit its iteration cap.
class ConvergenceFailure : public Error {
public:
    using Error::Error;
};

}  // namespace fedosaa
