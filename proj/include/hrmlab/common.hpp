#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hrmlab {

// Error taxonomy. The CLI maps these onto exit codes:
// ParseError -> 2, ValidationError -> 3, everything else -> 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ValueError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class RuntimeFailure : public Error {
public:
    using Error::Error;
};

namespace detail {
inline void str_append(std::ostringstream&) {}
template <class T, class... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    str_append(os, rest...);
}
} // namespace detail

template <class... Args>
std::string strcat(const Args&... args) {
    std::ostringstream os;
    detail::str_append(os, args...);
    return os.str();
}

using Rng = std::mt19937_64;

// Stable FNV-1a hash of (root seed, subsystem name). All subsystem rngs are
// seeded through this so one config seed drives the whole run.
inline uint64_t derive_seed(uint64_t root, std::string_view subsystem) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint8_t byte) {
        h ^= byte;
        h *= 1099511628211ull;
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<uint8_t>(root >> (8 * i)));
    for (char c : subsystem) mix(static_cast<uint8_t>(c));
    return h;
}

// Normal(0, stddev) resampled until |z| <= cutoff * stddev.
inline double truncated_normal(Rng& rng, double stddev = 1.0, double cutoff = 2.0) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (;;) {
        double z = dist(rng);
        if (std::abs(z) <= cutoff * stddev) return z;
    }
}

} // namespace hrmlab
