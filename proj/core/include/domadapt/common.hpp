#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace domadapt {

// Error taxonomy. The CLI maps these onto exit codes:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64, used to derive independent seeds from a master seed plus
// arbitrary salt values (cell indices, method names, ...).
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

inline uint64_t mix_seed(uint64_t seed, const std::string& salt) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : salt) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return mix_seed(seed, h);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace domadapt
