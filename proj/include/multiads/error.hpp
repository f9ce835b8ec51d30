#pragma once

#include <stdexcept>
#include <string>

namespace multiads {

/// Coarse failure class. The CLI maps it to the process exit code.
enum class ErrorCategory { config, data, numeric };

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    [[nodiscard]] ErrorCategory category() const noexcept { return category_; }

  private:
    ErrorCategory category_;
};

class ConfigError : public Error {
  public:
    explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class DataError : public Error {
  public:
    explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

class NumericError : public Error {
  public:
    explicit NumericError(const std::string& what) : Error(ErrorCategory::numeric, what) {}
};

#define MULTIADS_DEFINE_ERROR(Name, Base)                          \
    class Name : public Base {                                     \
      public:                                                      \
        explicit Name(const std::string& what) : Base(#Name ": " + what) {} \
    };

// knowledge base and prompts
MULTIADS_DEFINE_ERROR(ParseError, ConfigError)
MULTIADS_DEFINE_ERROR(ValidationError, ConfigError)
MULTIADS_DEFINE_ERROR(UnknownVariation, ConfigError)
MULTIADS_DEFINE_ERROR(UnknownProduct, ConfigError)
MULTIADS_DEFINE_ERROR(UnknownState, ConfigError)
MULTIADS_DEFINE_ERROR(InsufficientBatch, ConfigError)

// data and shapes
MULTIADS_DEFINE_ERROR(BackendError, DataError)
MULTIADS_DEFINE_ERROR(LayoutError, DataError)
MULTIADS_DEFINE_ERROR(DecodeError, DataError)
MULTIADS_DEFINE_ERROR(EmptyDataset, DataError)
MULTIADS_DEFINE_ERROR(EmptyReferences, DataError)
MULTIADS_DEFINE_ERROR(EmptyStack, DataError)
MULTIADS_DEFINE_ERROR(ShapeMismatch, DataError)
MULTIADS_DEFINE_ERROR(DimensionMismatch, DataError)
MULTIADS_DEFINE_ERROR(LabelOutOfRange, DataError)
MULTIADS_DEFINE_ERROR(DegenerateLabels, DataError)
MULTIADS_DEFINE_ERROR(NoPositives, DataError)
MULTIADS_DEFINE_ERROR(NoRegions, DataError)

// numerics
MULTIADS_DEFINE_ERROR(ZeroVector, NumericError)
MULTIADS_DEFINE_ERROR(NonNormalizedProbs, NumericError)
MULTIADS_DEFINE_ERROR(OutOfRangePrediction, NumericError)

#undef MULTIADS_DEFINE_ERROR

}  // namespace multiads
