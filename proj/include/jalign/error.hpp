#pragma once

#include <stdexcept>
#include <string>

namespace jalign {

/// Error classes surfaced by the library. The CLI maps each to a process exit code.
enum class ErrorKind {
    InvalidParameter,
    PointAtInfinity,
    DegenerateFrame,
    ZeroVariance,
    InvalidInput,
    InsufficientTexture,
    InfeasibleNegatives,
    InsufficientOverlap,
    Diverged,
    Io,
    Config,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidParameter: return "invalid-parameter";
        case ErrorKind::PointAtInfinity: return "point-at-infinity";
        case ErrorKind::DegenerateFrame: return "degenerate-frame";
        case ErrorKind::ZeroVariance: return "zero-variance";
        case ErrorKind::InvalidInput: return "invalid-input";
        case ErrorKind::InsufficientTexture: return "insufficient-texture";
        case ErrorKind::InfeasibleNegatives: return "infeasible-negatives";
        case ErrorKind::InsufficientOverlap: return "insufficient-overlap";
        case ErrorKind::Diverged: return "diverged";
        case ErrorKind::Io: return "io";
        case ErrorKind::Config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace jalign
