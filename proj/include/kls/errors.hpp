#pragma once

#include <stdexcept>
#include <string>

namespace kls {

/// Root of the library's exception hierarchy. The CLI maps ConfigError to
/// exit code 2 and every other kls::Error to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a numerical identity that failed to hold.
class NumericError : public Error {
public:
    using Error::Error;
};

class IntegrationDivergence : public NumericError {
public:
    IntegrationDivergence(const std::string& msg, std::size_t machine)
        : NumericError(msg), machine_(machine) {}
    std::size_t machine() const noexcept { return machine_; }

private:
    std::size_t machine_;
};

class WindowError : public Error {
public:
    using Error::Error;
};

class ConditioningError : public NumericError {
public:
    using NumericError::NumericError;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Raised by the shedding QP when no u in [0,1]^q satisfies the frequency
/// limits. Carries the constraint that is worst violated at u = 1.
class InfeasibleError : public Error {
public:
    InfeasibleError(const std::string& msg, int step, bool steady_state, double violation)
        : Error(msg), step_(step), steady_state_(steady_state), violation_(violation) {}
    int step() const noexcept { return step_; }
    bool steady_state() const noexcept { return steady_state_; }
    double violation() const noexcept { return violation_; }

private:
    int step_;
    bool steady_state_;
    double violation_;
};

/// The Neumann series behind the deviation bound does not contract.
class BoundInapplicable : public NumericError {
public:
    BoundInapplicable(const std::string& msg, double norm) : NumericError(msg), norm_(norm) {}
    double norm() const noexcept { return norm_; }

private:
    double norm_;
};

} // namespace kls
