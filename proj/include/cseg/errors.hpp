#pragma once

#include <stdexcept>
#include <string>

namespace cseg {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// ConfigError/UsageError -> 1, DataError/ShapeError -> 2, NumericError -> 3.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cseg
