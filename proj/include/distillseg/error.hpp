#pragma once

#include <stdexcept>
#include <string>

namespace distillseg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A file could not be found, read or decoded.
struct LoadError : Error {
    using Error::Error;
};
/// Data violates a structural invariant (shapes disagree, bad label value).
struct IntegrityError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ParameterError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
/// A caller broke an operation's precondition.
struct ContractError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct NormalizationError : Error {
    using Error::Error;
};
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace distillseg
