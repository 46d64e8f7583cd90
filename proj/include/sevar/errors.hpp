#pragma once

#include <stdexcept>
#include <string>

namespace sevar {

// Base class for everything this library throws on contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SEVAR_DEFINE_ERROR(name)          \
  class name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

SEVAR_DEFINE_ERROR(InvalidShape);
SEVAR_DEFINE_ERROR(ShapeMismatch);
SEVAR_DEFINE_ERROR(InvalidRange);
SEVAR_DEFINE_ERROR(NonScalarLoss);
SEVAR_DEFINE_ERROR(DegenerateBatch);
SEVAR_DEFINE_ERROR(InvalidLabel);
SEVAR_DEFINE_ERROR(ReductionTooLarge);
SEVAR_DEFINE_ERROR(InvalidReduction);
SEVAR_DEFINE_ERROR(InvalidConfig);
SEVAR_DEFINE_ERROR(CorruptDataset);
SEVAR_DEFINE_ERROR(MissingFile);
SEVAR_DEFINE_ERROR(InvalidTransform);

#undef SEVAR_DEFINE_ERROR

}  // namespace sevar
