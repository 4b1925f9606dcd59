#pragma once

#include <stdexcept>
#include <string>

namespace breechmark {

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1; anything else escaping a command is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// scan-io
class ParseError : public Error { using Error::Error; };
class SizeMismatchError : public Error { using Error::Error; };
class UnsupportedGeometryError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

// parameter validation shared by all modules
class ParameterError : public Error { using Error::Error; };

// preprocess
class LevelingError : public Error { using Error::Error; };
class IsolationError : public Error { using Error::Error; };
class UpscaleRefusedError : public Error { using Error::Error; };
class NormalizationError : public Error { using Error::Error; };

// tensor-net
class ShapeError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };

// supcon-loss
class LossUndefinedError : public Error { using Error::Error; };

// trainer
class DatasetRejectedError : public Error { using Error::Error; };
class ProtocolViolationError : public Error { using Error::Error; };

// cmc
class PartitionError : public Error { using Error::Error; };
class NoCorrelationError : public Error { using Error::Error; };

// eval-metrics
class UndefinedAucError : public Error { using Error::Error; };
class JoinError : public Error { using Error::Error; };

// cli
class ConfigError : public Error { using Error::Error; };

}  // namespace breechmark
