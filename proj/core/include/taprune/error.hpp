#pragma once

#include <stdexcept>
#include <string>

namespace taprune {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes incompatible with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered in a loss or gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

// Invalid user-supplied configuration or argument.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed file contents (dataset, checkpoint, record).
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace taprune
