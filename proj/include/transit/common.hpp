#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace transit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes for an op.
struct ShapeError : Error {
    using Error::Error;
};

// Bad numeric content: non-finite values, out-of-range labels, invalid sizes.
struct ValueError : Error {
    using Error::Error;
};

// Malformed input files, schema violations, missing features/labels.
struct DataError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Unreadable or incompatible checkpoint file.
struct CheckpointError : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::size_t epoch)
        : Error(msg), epoch(epoch) {}
    std::size_t epoch;
};

namespace detail {

template <typename... Args>
std::string msg(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

}  // namespace detail

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "{";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "}";
}

// Trim + ASCII case-fold; applied to every feature name on ingestion so that
// cross-dataset name matching is insensitive to formatting.
inline std::string canonical_feature_name(std::string name) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    name.erase(name.begin(), std::find_if(name.begin(), name.end(), not_space));
    name.erase(std::find_if(name.rbegin(), name.rend(), not_space).base(), name.end());
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return name;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// FNV-1a over raw bytes; used for config hashes in run manifests.
inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

}  // namespace transit
