#include "ltcl/error.hpp"

namespace ltcl {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyClass: return "empty-class";
        case ErrorCode::Domain: return "domain";
        case ErrorCode::Capacity: return "capacity";
        case ErrorCode::Parse: return "parse";
        case ErrorCode::Shape: return "shape";
        case ErrorCode::UnsupportedModel: return "unsupported-model";
        case ErrorCode::Divergence: return "divergence";
        case ErrorCode::ScheduleExhausted: return "schedule-exhausted";
        case ErrorCode::DegenerateConvexity: return "degenerate-convexity";
        case ErrorCode::MinimizerCertification: return "minimizer-certification";
        case ErrorCode::StrictConvexityViolation: return "strict-convexity-violation";
        case ErrorCode::Symmetry: return "symmetry";
        case ErrorCode::Coverage: return "coverage";
        case ErrorCode::Configuration: return "configuration";
        case ErrorCode::Validation: return "validation";
        case ErrorCode::Io: return "io";
    }
    return "unknown";
}

}  // namespace ltcl
