#pragma once

#include <stdexcept>
#include <string>

namespace floodgen {

// Base of every error raised by the library. The name() is stable and is what
// the CLI and the HTTP layer report.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)) {}
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define FLOODGEN_DEFINE_ERROR(Type)                                 \
  class Type : public Error {                                       \
   public:                                                          \
    explicit Type(const std::string& what) : Error(#Type, what) {} \
  }

// dataset
FLOODGEN_DEFINE_ERROR(MissingFile);
FLOODGEN_DEFINE_ERROR(DimensionMismatch);
FLOODGEN_DEFINE_ERROR(MaskInconsistent);
FLOODGEN_DEFINE_ERROR(EmptyDomain);
FLOODGEN_DEFINE_ERROR(DuplicateId);
FLOODGEN_DEFINE_ERROR(OutOfRange);
FLOODGEN_DEFINE_ERROR(BadLabelColor);
FLOODGEN_DEFINE_ERROR(DecodeError);
FLOODGEN_DEFINE_ERROR(InvalidMetadata);

// geometry
FLOODGEN_DEFINE_ERROR(NoReferenceObjects);
FLOODGEN_DEFINE_ERROR(AlreadyMetric);
FLOODGEN_DEFINE_ERROR(NotMetric);
FLOODGEN_DEFINE_ERROR(DepthProviderFailure);

// networks / losses / training
FLOODGEN_DEFINE_ERROR(BadDims);
FLOODGEN_DEFINE_ERROR(ShapeMismatch);
FLOODGEN_DEFINE_ERROR(LabelOutOfRange);
FLOODGEN_DEFINE_ERROR(NonFiniteLoss);
FLOODGEN_DEFINE_ERROR(MissingMetadata);
FLOODGEN_DEFINE_ERROR(InvalidConfig);
FLOODGEN_DEFINE_ERROR(ModelLoadError);

// inference / service
FLOODGEN_DEFINE_ERROR(BadRequest);
FLOODGEN_DEFINE_ERROR(EmptyInput);
FLOODGEN_DEFINE_ERROR(MissingApiKey);

#undef FLOODGEN_DEFINE_ERROR

}  // namespace floodgen
