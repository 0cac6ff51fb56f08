#pragma once

#include <stdexcept>
#include <string>

namespace fftrain {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes (see tools/fftrain.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace fftrain
