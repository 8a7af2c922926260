#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gazeswap {

/// Base of every error raised by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (shape mismatch, invalid range).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration: unknown names, malformed values, missing inputs.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Dataset on disk is incomplete or malformed. Carries the offending frame when known.
class LoadError : public Error {
public:
    LoadError(const std::string& what, std::string identity, int64_t frame_index)
        : Error(what), identity_(std::move(identity)), frame_index_(frame_index) {}

    const std::string& identity() const { return identity_; }
    int64_t frame_index() const { return frame_index_; }

private:
    std::string identity_;
    int64_t frame_index_;
};

/// Checkpoint header does not match the requested architecture or format version.
class ArchitectureMismatch : public Error {
public:
    using Error::Error;
};

/// Design matrix of a statistical fit is rank deficient.
class SingularDesign : public Error {
public:
    using Error::Error;
};

/// Non-finite loss during training.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace gazeswap
