#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace anticollapse {

enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    NonFinite,
    EmptyInput,
    NotSymmetric,
    NotPositiveDefinite,
    NotNormalized,
    EmptyBatch,
    EmptySelection,
    MissingProxy,
    NoNegativeProxies,
    KTooLarge,
    LengthMismatch,
    DegenerateInput,
    TooManyClasses,
    ClassTooSmall,
    BadMagic,
    UnsupportedVersion,
    TruncatedFile,
    NonFiniteValue,
    MalformedFile,
    IoError,
    NonFiniteGradient,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Library-wide exception. Every failure carries a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace anticollapse
