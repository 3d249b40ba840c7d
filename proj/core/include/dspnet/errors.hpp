#pragma once

#include <stdexcept>
#include <string>

namespace dspnet {

// Every failure the library surfaces derives from Error so callers can map
// categories onto exit codes without string matching.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid family, switch or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file (IDX, checkpoint header, CSV).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Checkpoint payload failed its CRC check or is truncated.
class CorruptError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// A forward result contained NaN or Inf.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

}  // namespace dspnet
