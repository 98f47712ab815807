#pragma once

#include <stdexcept>
#include <string>

namespace sdgzsl {

// Error taxonomy. Everything derives from Error so callers can catch one type;
// the concrete class tells you which contract was violated.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor extents (e.g. matmul inner dimensions).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf produced in forward or backward, sigma <= 0, NaN gradient, ...
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (dropout rate >= 1, non-positive dimension, ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset invariant violation (overlapping class sets, missing attribute row, ...).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Malformed file on disk (bad magic, truncation, version mismatch).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// API misuse (backward on a non-scalar, double backward without reset, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

} // namespace sdgzsl
