#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace misclass {

enum class ErrorCode {
    // formula
    EmptyFormula,
    SyntaxError,
    DuplicateProxy,
    DuplicateName,
    // data
    IoError,
    HeaderError,
    ParseError,
    RaggedRows,
    MissingColumn,
    IncompleteSurrogate,
    IncompleteCovariate,
    NonBinaryLatent,
    NoAnnotations,
    // numerics
    NonPositiveSigma,
    NonFiniteObjective,
    NonFiniteLikelihood,
    RankDeficient,
    Separation,
    NotConverged,
    SingularInformation,
    // estimators
    OneClassAnnotated,
    TooFewAnnotations,
    UndefinedRate,
    UnsupportedModel,
    ImputationModelFailed,
    // simulation / study
    CalibrationFailed,
    InvalidConfig,
    EmptyInput,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::EmptyFormula: return "EmptyFormula";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::DuplicateProxy: return "DuplicateProxy";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::HeaderError: return "HeaderError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::RaggedRows: return "RaggedRows";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::IncompleteSurrogate: return "IncompleteSurrogate";
    case ErrorCode::IncompleteCovariate: return "IncompleteCovariate";
    case ErrorCode::NonBinaryLatent: return "NonBinaryLatent";
    case ErrorCode::NoAnnotations: return "NoAnnotations";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorCode::NonFiniteLikelihood: return "NonFiniteLikelihood";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::OneClassAnnotated: return "OneClassAnnotated";
    case ErrorCode::TooFewAnnotations: return "TooFewAnnotations";
    case ErrorCode::UndefinedRate: return "UndefinedRate";
    case ErrorCode::UnsupportedModel: return "UnsupportedModel";
    case ErrorCode::ImputationModelFailed: return "ImputationModelFailed";
    case ErrorCode::CalibrationFailed: return "CalibrationFailed";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyInput: return "EmptyInput";
    }
    return "Unknown";
}

/// True for failures of the numerical machinery (as opposed to bad input).
inline bool is_numerical(ErrorCode code) {
    switch (code) {
    case ErrorCode::NonFiniteObjective:
    case ErrorCode::NonFiniteLikelihood:
    case ErrorCode::RankDeficient:
    case ErrorCode::Separation:
    case ErrorCode::NotConverged:
    case ErrorCode::SingularInformation:
    case ErrorCode::ImputationModelFailed:
    case ErrorCode::CalibrationFailed:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Raised by likelihood evaluation; carries the first offending row.
class NonFiniteRowError : public Error {
public:
    NonFiniteRowError(std::size_t row, const std::string& message)
        : Error(ErrorCode::NonFiniteLikelihood, message + " (row " + std::to_string(row) + ")"),
          row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace misclass
