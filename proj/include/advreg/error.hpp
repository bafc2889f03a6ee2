#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advreg {

enum class ErrorKind {
    ShapeMismatch,
    NonFiniteValue,
    LogOfNonPositive,
    NotScalar,
    IndexOutOfRange,
    TokenOutOfVocab,
    SequenceTooLong,
    AllPositionsMasked,
    TooFewOptions,
    GoldPositionMasked,
    ProbabilityOutOfRange,
    ZeroInputNorm,
    SupportMismatch,
    EmptyBatch,
    RecipeDatasetMismatch,
    NoValidSpan,
    EmptyDevSet,
    LengthMismatch,
    UnknownDocument,
    EmptyCorpus,
    EmptyExample,
    UnsortedBoundaries,
    BoundaryMismatch,
    DivisionByZeroMetric,
    InvalidSpec,
    InvalidConfig,
    DataError,
    UsageError,
};

inline constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::LogOfNonPositive: return "LogOfNonPositive";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::TokenOutOfVocab: return "TokenOutOfVocab";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::AllPositionsMasked: return "AllPositionsMasked";
    case ErrorKind::TooFewOptions: return "TooFewOptions";
    case ErrorKind::GoldPositionMasked: return "GoldPositionMasked";
    case ErrorKind::ProbabilityOutOfRange: return "ProbabilityOutOfRange";
    case ErrorKind::ZeroInputNorm: return "ZeroInputNorm";
    case ErrorKind::SupportMismatch: return "SupportMismatch";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::RecipeDatasetMismatch: return "RecipeDatasetMismatch";
    case ErrorKind::NoValidSpan: return "NoValidSpan";
    case ErrorKind::EmptyDevSet: return "EmptyDevSet";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::UnknownDocument: return "UnknownDocument";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::EmptyExample: return "EmptyExample";
    case ErrorKind::UnsortedBoundaries: return "UnsortedBoundaries";
    case ErrorKind::BoundaryMismatch: return "BoundaryMismatch";
    case ErrorKind::DivisionByZeroMetric: return "DivisionByZeroMetric";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DataError: return "DataError";
    case ErrorKind::UsageError: return "UsageError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the kinds above so that
/// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what)
{
    if (!cond) {
        fail(kind, what);
    }
}

/// Process exit code for a failure: 1 usage, 2 data, 3 numeric.
inline int exit_code(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::UsageError:
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidSpec:
        return 1;
    case ErrorKind::NonFiniteValue:
    case ErrorKind::LogOfNonPositive:
    case ErrorKind::NotScalar:
    case ErrorKind::ZeroInputNorm:
    case ErrorKind::SupportMismatch:
    case ErrorKind::ProbabilityOutOfRange:
    case ErrorKind::AllPositionsMasked:
    case ErrorKind::DivisionByZeroMetric:
        return 3;
    default:
        return 2;
    }
}

} // namespace advreg
