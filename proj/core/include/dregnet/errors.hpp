#pragma once

#include <stdexcept>
#include <string>

namespace dregnet {

/// Raised when operand shapes do not compose.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an operation produces NaN or Inf.
class NonFiniteError : public std::domain_error {
public:
    explicit NonFiniteError(const std::string& what) : std::domain_error(what) {}
};

/// Raised on malformed configuration, files or call ordering.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dregnet
