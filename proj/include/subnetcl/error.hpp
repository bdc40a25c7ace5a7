#pragma once

#include <stdexcept>
#include <string>

namespace subnetcl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Wrong tensor/batch shapes anywhere in the pipeline.
struct DimensionError : Error {
    using Error::Error;
};

// Bad user-supplied configuration (capacities, layer sizes, paths).
struct ConfigError : Error {
    using Error::Error;
};

// Forward cache does not match the store state backward() was handed.
struct InvalidCacheError : Error {
    using Error::Error;
};

// No output head registered for the requested task.
struct MissingHeadError : Error {
    using Error::Error;
};

// Corrupt or truncated encoded bundle.
struct IntegrityError : Error {
    using Error::Error;
};

// Malformed input file (IDX/CSV).
struct ParseError : Error {
    using Error::Error;
};

// Loss became non-finite mid-training.
struct TrainingDivergedError : Error {
    using Error::Error;
};

}  // namespace subnetcl
