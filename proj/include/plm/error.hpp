#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plm {

/// Base of every error raised by the library. Callers that only care about
/// "something in plm failed" catch this one.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents that do not line up (matmul inner dims, layer-norm width, ...).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An index outside its valid range (token ids, gather rows, vocabulary ids).
class IndexError : public Error {
public:
    using Error::Error;
};

/// A violated precondition of an operation.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed model configuration (heads not dividing hidden size, bad preset, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input text (FASTA or task records). Carries the 1-based line.
class FormatError : public Error {
public:
    FormatError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite values appeared where they must not (NaN/Inf in a forward pass
/// or a training loss).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
public:
    DivergenceError(std::size_t step, double lr, const std::string& what)
        : NumericError("diverged at step " + std::to_string(step) + " (lr=" + std::to_string(lr) +
                       "): " + what),
          step_(step),
          lr_(lr) {}

    std::size_t step() const noexcept { return step_; }
    double lr() const noexcept { return lr_; }

private:
    std::size_t step_;
    double lr_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A checkpoint file that cannot be loaded. The subclasses name the cause.
class CheckpointError : public IoError {
public:
    using IoError::IoError;
};

class BadMagicError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class UnsupportedVersionError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class TruncatedCheckpointError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// A stored tensor does not fit the target model; the message names it.
class ShapeMismatchError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

}  // namespace plm
