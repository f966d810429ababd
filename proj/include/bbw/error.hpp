#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bbw {

// Root of every domain error raised by the toolkit. `kind()` is a stable
// machine-readable tag used by the CLI error document and the proxy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view kind() const noexcept { return "Error"; }
};

#define BBW_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                           \
   public:                                                              \
    using Error::Error;                                                 \
    std::string_view kind() const noexcept override { return #Name; }   \
  }

BBW_DEFINE_ERROR(InvalidBoxError);
BBW_DEFINE_ERROR(OverflowRejected);
BBW_DEFINE_ERROR(FeatureDimensionError);
BBW_DEFINE_ERROR(InvalidFeatureError);
BBW_DEFINE_ERROR(EmptyInputError);
BBW_DEFINE_ERROR(AlignmentError);
BBW_DEFINE_ERROR(InsufficientPairsError);
BBW_DEFINE_ERROR(ZeroDenominatorError);
BBW_DEFINE_ERROR(DegenerateMetricError);
BBW_DEFINE_ERROR(ConfigError);
BBW_DEFINE_ERROR(FormatError);
BBW_DEFINE_ERROR(IoError);
BBW_DEFINE_ERROR(NotFoundError);
BBW_DEFINE_ERROR(BackendError);

#undef BBW_DEFINE_ERROR

}  // namespace bbw
