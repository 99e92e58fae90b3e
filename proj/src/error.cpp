#include "bdre/error.hpp"

namespace bdre {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ZeroDeathRate: return "ZeroDeathRate";
        case ErrorCode::Overflow: return "Overflow";
        case ErrorCode::Divergence: return "Divergence";
        case ErrorCode::Inconclusive: return "Inconclusive";
        case ErrorCode::UnknownModel: return "UnknownModel";
        case ErrorCode::MissingParam: return "MissingParam";
        case ErrorCode::NoCommonV: return "NoCommonV";
        case ErrorCode::NotIrreducible: return "NotIrreducible";
        case ErrorCode::DegenerateRatio: return "DegenerateRatio";
        case ErrorCode::XiDivergent: return "XiDivergent";
        case ErrorCode::RateExplosion: return "RateExplosion";
        case ErrorCode::SpeedCap: return "SpeedCap";
        case ErrorCode::StepRejected: return "StepRejected";
        case ErrorCode::SkewSymmetryFailed: return "SkewSymmetryFailed";
        case ErrorCode::NegativeEffectiveDrift: return "NegativeEffectiveDrift";
        case ErrorCode::RateTooLargeForStep: return "RateTooLargeForStep";
        case ErrorCode::AllCensored: return "AllCensored";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::DivergenceSuspected: return "DivergenceSuspected";
        case ErrorCode::HorizonExceeded: return "HorizonExceeded";
        case ErrorCode::NotLyapunov: return "NotLyapunov";
        case ErrorCode::BoundViolated: return "BoundViolated";
        case ErrorCode::CellMismatch: return "CellMismatch";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace bdre
