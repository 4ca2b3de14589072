#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdl {

/// Raised when an argument or input violates an operation's contract.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a referenced entity (session, sample, label, file) does not exist.
class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when training produces a non-finite loss.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Collects non-fatal warnings emitted by an operation.
struct Diagnostics {
    std::vector<std::string> warnings;

    void warn(std::string message) { warnings.push_back(std::move(message)); }
    bool empty() const { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message) {
    if (diag != nullptr) {
        diag->warn(std::move(message));
    }
}

using WindowId = std::int64_t;
using TokenId = std::int32_t;
using ClusterId = std::int32_t;

/// Label given to events outside any annotated activity span.
inline constexpr const char* kNoLabel = "No Label";
/// Catch-all label for clusters without ratings or unmappable activities.
inline constexpr const char* kOtherLabel = "Other";

}  // namespace pdl
