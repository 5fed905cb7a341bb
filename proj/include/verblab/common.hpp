#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace verblab {

// Bad arguments, malformed inputs, violated preconditions. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Failures that happen while doing valid work (diverging loss, I/O). Exit code 1.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Sub-seed for a named stage: master seed plus a hash of the stage name.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stage) {
    return master + fnv1a64(stage);
}

std::string hex64(std::uint64_t v);

// Uniform integer in [0, n) that does not depend on the standard library's distribution code.
inline std::size_t uniform_index(Rng & rng, std::size_t n) {
    if (n == 0) throw ValidationError("uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do { r = rng(); } while (r >= limit);
    return static_cast<std::size_t>(r % n);
}

// Uniform real in [0, 1) with 53 random bits.
inline double uniform01(Rng & rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng & rng);

template <class T>
void shuffle_in_place(std::vector<T> & v, Rng & rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

} // namespace verblab
