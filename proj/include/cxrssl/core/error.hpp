#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cxrssl {

// Base of every error thrown by the library. `code()` is a short stable token
// (e.g. "dimension_mismatch") used by the command line for machine-readable
// failure lines.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define CXRSSL_DEFINE_ERROR(Name, token)                                   \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(token, what) {}         \
  }

CXRSSL_DEFINE_ERROR(DimensionMismatch, "dimension_mismatch");
CXRSSL_DEFINE_ERROR(ShapeMismatch, "shape_mismatch");
CXRSSL_DEFINE_ERROR(NonFiniteError, "non_finite");
CXRSSL_DEFINE_ERROR(InvalidArgument, "invalid_argument");
CXRSSL_DEFINE_ERROR(ValidationError, "validation_error");
CXRSSL_DEFINE_ERROR(MissingHead, "missing_head");
CXRSSL_DEFINE_ERROR(OutOfRange, "out_of_range");
CXRSSL_DEFINE_ERROR(UndefinedMetric, "undefined_metric");
CXRSSL_DEFINE_ERROR(VersionMismatch, "version_mismatch");
CXRSSL_DEFINE_ERROR(IoError, "io_error");
CXRSSL_DEFINE_ERROR(ConfigError, "config_error");
CXRSSL_DEFINE_ERROR(UnlabeledData, "unlabeled_data");
CXRSSL_DEFINE_ERROR(UndefinedLoss, "undefined_loss");

#undef CXRSSL_DEFINE_ERROR

}  // namespace cxrssl
