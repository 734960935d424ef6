#pragma once

#include <stdexcept>
#include <string>

namespace tme {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input vector/matrix has the wrong dimensions.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A derivative evaluation would exceed the configured nesting budget.
class DepthExceededError : public Error {
public:
    using Error::Error;
};

/// A field evaluation produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// A matrix that must be positive (semi)definite is not, even after jitter.
class NotPsdError : public Error {
public:
    using Error::Error;
};

/// A linear system (innovation or prediction covariance) is singular.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

/// A simulated state left the finite range.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// A measurement time does not lie on the simulated trajectory grid.
class ScheduleError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// An applicability condition of a theoretical result does not hold.
class ConditionViolatedError : public Error {
public:
    using Error::Error;
};

}  // namespace tme
