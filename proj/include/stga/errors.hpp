#pragma once

#include <stdexcept>
#include <string>

namespace stga {

// Failure category; the CLI maps each kind to a distinct exit code.
enum class ErrorKind { Config, Data, Numeric, Io };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

struct InvalidArgumentError : Error {
    explicit InvalidArgumentError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

struct InvalidDimensionError : Error {
    explicit InvalidDimensionError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

// A documented precondition was violated by the caller (e.g. asymmetric adjacency).
struct ContractViolationError : Error {
    explicit ContractViolationError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

// Player set too large for exact enumeration; callers should sample instead.
struct TooLargeError : Error {
    explicit TooLargeError(const std::string& m) : Error(ErrorKind::Config, m) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

struct EmptyDataError : Error {
    explicit EmptyDataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

struct LaneDataError : Error {
    explicit LaneDataError(const std::string& m) : Error(ErrorKind::Data, m) {}
};

struct ConvergenceError : Error {
    ConvergenceError(const std::string& m, double last_estimate)
        : Error(ErrorKind::Numeric, m), last_estimate(last_estimate) {}
    double last_estimate;
};

struct DivergenceError : Error {
    DivergenceError(const std::string& m, int epoch) : Error(ErrorKind::Numeric, m), epoch(epoch) {}
    int epoch;
};

struct SingularSystemError : Error {
    SingularSystemError(const std::string& m, double condition_number)
        : Error(ErrorKind::Numeric, m), condition_number(condition_number) {}
    double condition_number;
};

// A model evaluation produced a non-finite value for some coalition.
struct EvaluationError : Error {
    EvaluationError(const std::string& m, long coalition_id)
        : Error(ErrorKind::Numeric, m), coalition_id(coalition_id) {}
    long coalition_id;
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};

}  // namespace stga
