#pragma once

#include <stdexcept>
#include <string>

namespace icrl {

// Error taxonomy. Each class maps to a distinct process exit code in the CLI.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rejected inputs / precondition violations.
struct InputError : Error {
    using Error::Error;
};

// Inconsistent run configuration (flag/variant mismatches, train-test overlap, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
    using Error::Error;
};

struct VersionError : IoError {
    using IoError::IoError;
};

struct TruncatedError : IoError {
    using IoError::IoError;
};

struct ChecksumError : IoError {
    using IoError::IoError;
};

// NaN/Inf surfaced from numerical code.
struct NumericError : Error {
    using Error::Error;
};

// Structurally unusable data (monotone filtering left <2 checkpoints,
// context impossible under every candidate policy, ...).
struct DegenerateError : Error {
    using Error::Error;
};

}  // namespace icrl
