#pragma once

// Shared error types and small utilities used across the library.

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace kdlab {

// Error taxonomy. The CLI maps these onto its exit-code contract:
//   ConfigError -> 1, DataError -> 2, everything else -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; carries the offending epoch/step.
struct DivergenceError : std::runtime_error {
    int epoch = -1;
    long step = -1;
    DivergenceError(const std::string& msg, int epoch_, long step_)
        : std::runtime_error(msg), epoch(epoch_), step(step_) {}
};

// Shortest decimal form that round-trips the binary value exactly.
// %.9g for binary32, %.17g for binary64.
inline std::string format_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// FNV-1a 64-bit. Used for cheap content ids (checkpoint ids, cell seeds).
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace kdlab
