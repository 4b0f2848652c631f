#pragma once

#include <stdexcept>
#include <string>

namespace karipap {

/// Base of every error raised by the library. `kind()` names the failure
/// class so callers (and the CLI) can map it without RTTI games.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

    [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define KARIPAP_DEFINE_ERROR(Name)                                              \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what) : Error(#Name, what) {}          \
    };

// tensor core
KARIPAP_DEFINE_ERROR(ElementCountMismatch)
KARIPAP_DEFINE_ERROR(InvalidPermutation)
KARIPAP_DEFINE_ERROR(AxisPartitionError)
KARIPAP_DEFINE_ERROR(ExtentMismatch)
KARIPAP_DEFINE_ERROR(NonFiniteInput)
// lattice / pipeline
KARIPAP_DEFINE_ERROR(ShapeMismatch)
KARIPAP_DEFINE_ERROR(OracleBudgetExceeded)
KARIPAP_DEFINE_ERROR(NonConvergence)
KARIPAP_DEFINE_ERROR(MissingForwardCache)
KARIPAP_DEFINE_ERROR(ConfigInvalid)
KARIPAP_DEFINE_ERROR(DivergenceDetected)
KARIPAP_DEFINE_ERROR(UnknownDtype)
// persistence
KARIPAP_DEFINE_ERROR(BadMagic)
KARIPAP_DEFINE_ERROR(UnsupportedVersion)
KARIPAP_DEFINE_ERROR(TruncatedPayload)
KARIPAP_DEFINE_ERROR(IoError)
KARIPAP_DEFINE_ERROR(ManifestInvalid)

#undef KARIPAP_DEFINE_ERROR

} // namespace karipap
