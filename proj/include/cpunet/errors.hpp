#pragma once

#include <stdexcept>
#include <string>

namespace cpunet {

/// Base of every error thrown by the library. `exit_code()` maps the error
/// family onto the CLI's documented exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Tensor shapes that cannot be combined.
class DimensionError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Invalid configuration values or combinations.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Malformed or inconsistent input data (images, masks, checkpoints).
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Filesystem failures. Reported as data errors on the command line.
class IoError : public DataError {
public:
    using DataError::DataError;
};

/// NaN/Inf during training or gradient checking, or a gradient check breach.
class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

[[noreturn]] void throw_dimension(const std::string& where, const std::string& what);

}  // namespace cpunet
