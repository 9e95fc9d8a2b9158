#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxyattn {

// Raised when operand shapes do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised for invalid configuration or parameter values supplied by a caller.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File-level failures. The subclasses let callers tell a missing file from a
// malformed one without string matching.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingFileError : public IoError {
public:
    using IoError::IoError;
};

class ShapeMismatchError : public IoError {
public:
    using IoError::IoError;
};

class DtypeMismatchError : public IoError {
public:
    using IoError::IoError;
};

// An internal invariant failed (e.g. non-finite loss during training).
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string shape_str(std::span<const std::size_t> shape);

}  // namespace proxyattn
