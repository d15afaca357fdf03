#pragma once

#include <stdexcept>
#include <string>

namespace alamo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File access or file-format failure (unreadable path, bad magic, payload mismatch).
class IoError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shape/extent contract violation between tensors, grids or masks.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or divergence detected during numerics.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace alamo
