#pragma once

#include <stdexcept>
#include <string>

namespace railsynth {

/// Base of every error the library raises. The CLI maps `is_user_error()`
/// to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual bool is_user_error() const noexcept { return false; }
};

/// Inputs violate a documented precondition or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
    bool is_user_error() const noexcept override { return true; }
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
    bool is_user_error() const noexcept override { return true; }
};

/// Persisted data written by an incompatible schema version.
class VersionError : public Error {
public:
    using Error::Error;
    bool is_user_error() const noexcept override { return true; }
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A segmenter or chroma key produced no object pixels.
class ExtractionEmpty : public Error {
public:
    using Error::Error;
};

/// Rescaling would produce an object below the minimum visible height.
class ObjectTooSmall : public Error {
public:
    using Error::Error;
};

class PlacementOutOfFrame : public Error {
public:
    using Error::Error;
};

/// External process misbehaved: spawn failure, timeout, protocol violation
/// or invalid payload.
class PluginError : public Error {
public:
    using Error::Error;
};

} // namespace railsynth
