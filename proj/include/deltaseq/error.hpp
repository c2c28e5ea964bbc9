#pragma once

#include <stdexcept>
#include <string>

namespace deltaseq {

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text (bad row width, non-numeric cell).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Arguments or data that violate a documented precondition or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Value outside the mathematical domain of an operation (log of 0, atanh of 1).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Statistic undefined for the given data, e.g. a zero-variance row.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Operation not allowed in the object's current state.
class StateError : public Error {
public:
    using Error::Error;
};

/// Requested work exceeds a configured budget.
class ResourceError : public Error {
public:
    using Error::Error;
};

} // namespace deltaseq
