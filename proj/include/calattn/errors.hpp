#pragma once

#include <stdexcept>
#include <string>

namespace calattn {

// Every failure the library reports derives from Error. The category decides
// the CLI exit code (see tools/calattn_cli.cpp).
enum class ErrorCategory { Config, Data, Numeric, Io, Logic };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define CALATTN_DEFINE_ERROR(Name, Category)                    \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what)                      \
        : Error(ErrorCategory::Category, #Name ": " + what) {} \
  };

CALATTN_DEFINE_ERROR(ShapeMismatch, Logic)
CALATTN_DEFINE_ERROR(NonScalarLoss, Logic)
CALATTN_DEFINE_ERROR(NonPositiveScale, Numeric)
CALATTN_DEFINE_ERROR(NonPositiveTemperature, Numeric)
CALATTN_DEFINE_ERROR(DegenerateProb, Numeric)
CALATTN_DEFINE_ERROR(NonFiniteValue, Numeric)
CALATTN_DEFINE_ERROR(EmptyBatch, Data)
CALATTN_DEFINE_ERROR(MissingProbs, Data)
CALATTN_DEFINE_ERROR(DegenerateLabels, Data)
CALATTN_DEFINE_ERROR(ZeroVariance, Data)
CALATTN_DEFINE_ERROR(BadMagic, Data)
CALATTN_DEFINE_ERROR(CountMismatch, Data)
CALATTN_DEFINE_ERROR(TruncatedFile, Data)
CALATTN_DEFINE_ERROR(TooSmall, Data)
CALATTN_DEFINE_ERROR(ZeroStd, Data)
CALATTN_DEFINE_ERROR(IoError, Io)
CALATTN_DEFINE_ERROR(ManifestMismatch, Io)
CALATTN_DEFINE_ERROR(BlobSizeMismatch, Io)
CALATTN_DEFINE_ERROR(ConfigError, Config)

#undef CALATTN_DEFINE_ERROR

}  // namespace calattn
