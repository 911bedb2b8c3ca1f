#pragma once

#include <stdexcept>
#include <string>

namespace statret {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform to an operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

/// Input data failed validation (dangling ids, duplicates, malformed records).
struct ValidationError : Error {
    using Error::Error;
};

/// A configuration is internally inconsistent or names an unknown option.
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite value encountered where training cannot continue.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace statret
