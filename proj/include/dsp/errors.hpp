#pragma once

#include <stdexcept>
#include <string>

namespace dsp {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError -> 1, data-shaped errors -> 2, NumericError -> 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration value: bad dimensions, bad schedule parameters,
// unknown mode names.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor/vector dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Index outside its valid range (e.g. a diffusion step outside 1..T).
class IndexError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent input data (parse and validation failures).
class DataError : public Error {
public:
    using Error::Error;
};

// Operation not valid for the current state (e.g. statistics of an empty
// collection).
class StateError : public Error {
public:
    using Error::Error;
};

// Non-finite values encountered during numeric work.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace dsp
