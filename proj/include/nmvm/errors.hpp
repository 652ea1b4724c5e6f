#pragma once

#include <stdexcept>
#include <string>

namespace nmvm {

/// Coarse error classes. The CLI maps them onto process exit codes.
enum class ErrorKind {
    input,       ///< malformed arguments or spec files
    domain,      ///< argument outside a function's mathematical domain
    infeasible,  ///< optimization problem has no admissible solution
    degenerate,  ///< problem data is singular (e.g. zero premium vector)
    internal     ///< an invariant that should always hold was violated
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};

class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& what) : Error(ErrorKind::infeasible, what) {}
};

class DegenerateError : public Error {
public:
    explicit DegenerateError(const std::string& what) : Error(ErrorKind::degenerate, what) {}
};

class InvariantError : public Error {
public:
    explicit InvariantError(const std::string& what) : Error(ErrorKind::internal, what) {}
};

}  // namespace nmvm
