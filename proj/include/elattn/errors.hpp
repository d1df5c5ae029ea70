#pragma once

#include <stdexcept>
#include <string>

namespace elattn {

// Shape or dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad scalar/configuration argument (lo >= hi, beams < 1, ...).
struct ParamError : std::invalid_argument {
    explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Cache or session state inconsistent with the requested operation.
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Sequence longer than the model supports.
struct LengthError : std::runtime_error {
    explicit LengthError(const std::string& msg) : std::runtime_error(msg) {}
};

// Operation not applicable to this architecture / attention mode.
struct ModeError : std::runtime_error {
    explicit ModeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced where the contract requires finiteness.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad input data (token files, inline sequences).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and checkpoint decoding failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BadMagicError : IoError {
    explicit BadMagicError(const std::string& msg) : IoError(msg) {}
};

struct VersionError : IoError {
    explicit VersionError(const std::string& msg) : IoError(msg) {}
};

struct TruncatedError : IoError {
    explicit TruncatedError(const std::string& msg) : IoError(msg) {}
};

struct TensorShapeMismatchError : IoError {
    explicit TensorShapeMismatchError(const std::string& msg) : IoError(msg) {}
};

}  // namespace elattn
