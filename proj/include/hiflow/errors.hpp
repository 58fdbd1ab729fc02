#pragma once

#include <stdexcept>
#include <string>

namespace hiflow {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extents or ranks that do not fit an operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameters or option combinations.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Image extents that do not tile into windows / blocks.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Input outside the mathematical domain of a function.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Non-finite values produced by a forward op (debug builds).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, long iteration) : Error(what), iteration_(iteration) {}
    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

}  // namespace hiflow
