#pragma once

#include <stdexcept>
#include <string>

namespace projnce {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PROJNCE_DEFINE_ERROR(Name)             \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(std::string(#Name ": ") + what) {} \
  }

PROJNCE_DEFINE_ERROR(DimensionError);
PROJNCE_DEFINE_ERROR(DegenerateNorm);
PROJNCE_DEFINE_ERROR(DomainError);
PROJNCE_DEFINE_ERROR(EvalError);
PROJNCE_DEFINE_ERROR(SingularCovariance);
PROJNCE_DEFINE_ERROR(NoiseImpossible);
PROJNCE_DEFINE_ERROR(NonFiniteGradient);
PROJNCE_DEFINE_ERROR(DegenerateLabels);
PROJNCE_DEFINE_ERROR(EmptyClass);
PROJNCE_DEFINE_ERROR(EmptySupport);
PROJNCE_DEFINE_ERROR(MissingPositive);
PROJNCE_DEFINE_ERROR(InsufficientSamples);
PROJNCE_DEFINE_ERROR(ConfigError);
PROJNCE_DEFINE_ERROR(FormatError);

#undef PROJNCE_DEFINE_ERROR

}  // namespace projnce
