#pragma once

#include <stdexcept>
#include <string>

namespace mbcbf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Robot position coincides with an obstacle center, so n is undefined.
class DegenerateGeometry : public Error {
public:
    using Error::Error;
};

/// A policy or vector field produced a non-finite value.
class IntegrationError : public Error {
public:
    using Error::Error;
};

/// Backup flow could not be computed (degenerate geometry mid-flow).
class FlowError : public Error {
public:
    using Error::Error;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class ScenarioError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class VersionMismatch : public Error {
public:
    using Error::Error;
};

} // namespace mbcbf
