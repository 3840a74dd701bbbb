#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dint {

// Error taxonomy used across the library. The CLI maps these to exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed checkpoint / dump file; carries the byte offset of the defect.
struct FormatError : std::runtime_error {
    size_t offset;
    FormatError(const std::string& msg, size_t off)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// NaN/Inf detected in forward or backward. Fatal for the current step.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Generator cannot satisfy the requested layout (e.g. needles do not fit).
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

}  // namespace dint
