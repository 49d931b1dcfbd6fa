#pragma once

#include <stdexcept>
#include <string>

namespace nemo {

/// Base class for all library errors. `tag()` is a stable, machine-parsable
/// identifier used by the CLI on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string tag, const std::string& what)
      : std::runtime_error(what), tag_(std::move(tag)) {}
  const std::string& tag() const noexcept { return tag_; }

 private:
  std::string tag_;
};

#define NEMO_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

NEMO_DEFINE_ERROR(DegenerateRotation);
NEMO_DEFINE_ERROR(BehindCamera);
NEMO_DEFINE_ERROR(DegenerateConfiguration);
NEMO_DEFINE_ERROR(NonScalarLoss);
NEMO_DEFINE_ERROR(ShapeMismatch);
NEMO_DEFINE_ERROR(DimensionMismatch);
NEMO_DEFINE_ERROR(DegeneratePhase);
NEMO_DEFINE_ERROR(NoMesh);
NEMO_DEFINE_ERROR(EmptyMask);
NEMO_DEFINE_ERROR(MissingInitialEstimate);
NEMO_DEFINE_ERROR(NoValidKeypoints);
NEMO_DEFINE_ERROR(ParseError);
NEMO_DEFINE_ERROR(ModelHashMismatch);
NEMO_DEFINE_ERROR(IoError);

#undef NEMO_DEFINE_ERROR

}  // namespace nemo
