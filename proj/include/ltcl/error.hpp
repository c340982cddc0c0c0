#pragma once

#include <stdexcept>
#include <string>

namespace ltcl {

enum class ErrorCode {
    EmptyClass,
    Domain,
    Capacity,
    Parse,
    Shape,
    UnsupportedModel,
    Divergence,
    ScheduleExhausted,
    DegenerateConvexity,
    MinimizerCertification,
    StrictConvexityViolation,
    Symmetry,
    Coverage,
    Configuration,
    Validation,
    Io,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// IDX parse failures are distinguishable by sub-kind.
enum class ParseFailure { BadMagic, DimensionMismatch, Truncated, Unreadable };

class ParseError : public Error {
public:
    ParseError(ParseFailure failure, const std::string& what)
        : Error(ErrorCode::Parse, what), failure_(failure) {}

    [[nodiscard]] ParseFailure failure() const noexcept { return failure_; }

private:
    ParseFailure failure_;
};

class DivergenceError : public Error {
public:
    DivergenceError(int epoch, const std::string& what)
        : Error(ErrorCode::Divergence, what), epoch_(epoch) {}

    [[nodiscard]] int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
    if (!condition) {
        throw Error(code, what);
    }
}

}  // namespace ltcl
