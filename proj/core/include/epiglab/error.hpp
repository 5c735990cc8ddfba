#pragma once

#include <stdexcept>
#include <string>

namespace epiglab {

/// Base class for every error raised by the library. The concrete type names
/// the failure category; what() carries the context (offset, row, index...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EPIGLAB_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

EPIGLAB_DEFINE_ERROR(FormatError);       // malformed or truncated file
EPIGLAB_DEFINE_ERROR(DataError);         // well-formed input with bad content
EPIGLAB_DEFINE_ERROR(RangeError);        // label outside its declared class range
EPIGLAB_DEFINE_ERROR(ConfigError);       // invalid configuration or arguments
EPIGLAB_DEFINE_ERROR(ShapeError);        // dimension mismatch
EPIGLAB_DEFINE_ERROR(StateError);        // operation not valid in the current state
EPIGLAB_DEFINE_ERROR(TrainingError);     // non-finite loss during optimisation
EPIGLAB_DEFINE_ERROR(ScoringError);      // NaN or otherwise unusable acquisition score
EPIGLAB_DEFINE_ERROR(DomainError);       // argument outside a function's domain
EPIGLAB_DEFINE_ERROR(TuningError);       // no radius meets the purity target
EPIGLAB_DEFINE_ERROR(AggregationError);  // records cannot be combined
EPIGLAB_DEFINE_ERROR(TimingError);       // no timed steps to summarise

#undef EPIGLAB_DEFINE_ERROR

}  // namespace epiglab
