#pragma once

#include <stdexcept>
#include <string>

namespace kgsa {

/// Base for every error raised by the library. The CLI maps the three
/// subclasses onto exit codes 1, 2 and 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or API misuse (bad arguments, missing table entries).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or non-finite input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Factorization failure, degenerate normalization and similar.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace kgsa
