#pragma once

#include <stdexcept>
#include <string>

namespace trideform {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad argument, bad config, dimension mismatch. Maps to CLI exit code 1.
struct ValidationError : Error {
    using Error::Error;
};

// Malformed file container (bad magic, unparseable header).
struct FormatError : ValidationError {
    using ValidationError::ValidationError;
};

// Structurally valid header contradicted by the payload.
struct CorruptionError : ValidationError {
    using ValidationError::ValidationError;
};

// Missing/unreadable/unwritable files.
struct IoError : ValidationError {
    using ValidationError::ValidationError;
};

// Non-finite values where finite ones are required. Maps to CLI exit code 2.
struct NumericError : Error {
    using Error::Error;
};

// Zero-norm vector fed to a direction-based operation, or a degenerate
// triangle (area below 1e-12).
struct DegenerateInputError : ValidationError {
    using ValidationError::ValidationError;
};

// Geometry the OBJ subset does not cover (quads, polygons).
struct UnsupportedGeometryError : ValidationError {
    using ValidationError::ValidationError;
};

// Id not present in a loaded lookup set (e.g. embedding cache).
struct LookupError : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace trideform
