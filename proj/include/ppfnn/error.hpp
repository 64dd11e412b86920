#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ppfnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. `line` and `column` are 1-based; 0 means unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line, std::size_t column)
        : Error(what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"),
          line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

/// Well-formed input that violates a model invariant (missing slack, dangling branch, ...).
class CaseError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NonConvergence : public Error {
public:
    NonConvergence(int iterations, double max_mismatch)
        : Error("power flow did not converge after " + std::to_string(iterations) +
                " iterations (max mismatch " + std::to_string(max_mismatch) + " p.u.)"),
          iterations_(iterations), max_mismatch_(max_mismatch) {}

    int iterations() const noexcept { return iterations_; }
    double max_mismatch() const noexcept { return max_mismatch_; }

private:
    int iterations_;
    double max_mismatch_;
};

class SingularJacobian : public Error {
public:
    explicit SingularJacobian(int iteration)
        : Error("singular power flow Jacobian at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

/// Non-finite loss or gradient during training.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

class IoError : public Error {
public:
    IoError(const std::string& what, const std::string& path)
        : Error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace ppfnn
