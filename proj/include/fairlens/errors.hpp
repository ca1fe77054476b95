#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fairlens {

// Base class of all engine errors. code() is the stable machine-readable
// name that also appears in report warnings.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define FAIRLENS_DEFINE_ERROR(Name)                \
  class Name : public Error {                      \
   public:                                         \
    explicit Name(const std::string& message)      \
        : Error(#Name, message) {}                 \
  }

// tabular-io
FAIRLENS_DEFINE_ERROR(MalformedRow);
FAIRLENS_DEFINE_ERROR(EmptyDataset);
FAIRLENS_DEFINE_ERROR(MixedSchema);
FAIRLENS_DEFINE_ERROR(MissingColumn);
FAIRLENS_DEFINE_ERROR(NonNumericThreshold);
FAIRLENS_DEFINE_ERROR(MissingCell);
FAIRLENS_DEFINE_ERROR(DegenerateFacet);

// model-client
FAIRLENS_DEFINE_ERROR(EndpointUnreachable);
FAIRLENS_DEFINE_ERROR(ResponseShapeMismatch);
FAIRLENS_DEFINE_ERROR(NonRetriableModelError);
FAIRLENS_DEFINE_ERROR(IncompatibleRule);
FAIRLENS_DEFINE_ERROR(ArityMismatch);

// bias metrics
FAIRLENS_DEFINE_ERROR(LengthMismatch);
FAIRLENS_DEFINE_ERROR(InsufficientNeighbors);

// kernel-shap
FAIRLENS_DEFINE_ERROR(BudgetExceeded);
FAIRLENS_DEFINE_ERROR(InsufficientSamples);
FAIRLENS_DEFINE_ERROR(ModelFailure);

// monitor
FAIRLENS_DEFINE_ERROR(AllResamplesUndefined);
FAIRLENS_DEFINE_ERROR(FeatureSetMismatch);
FAIRLENS_DEFINE_ERROR(ZeroReferenceMass);

// engine
FAIRLENS_DEFINE_ERROR(SchemaError);
FAIRLENS_DEFINE_ERROR(CrossFieldError);
FAIRLENS_DEFINE_ERROR(ColumnNotFound);
FAIRLENS_DEFINE_ERROR(FatalJobError);
FAIRLENS_DEFINE_ERROR(IoError);
FAIRLENS_DEFINE_ERROR(ConfigError);

#undef FAIRLENS_DEFINE_ERROR

}  // namespace fairlens
