#pragma once

#include <stdexcept>
#include <string>

namespace gncurv {

/// Malformed or inconsistent input data (files, graphs, configs).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (non-finite values, breakdown of an algorithm).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace gncurv
