#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtlab {

// Thrown when a scene spec cannot be satisfied (object placement rejected
// too many times).
struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on geometry/shape mismatches between configs, parameter vectors and
// inputs.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a loss or risk evaluates to a non-finite value.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on invalid call combinations (e.g. ws pseudo-labels without a weak
// label, training mode without the data it needs).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a over raw bytes. Used to fingerprint images when checking that the
// teacher and student consumed the same view.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// --- little-endian binary helpers (file formats are pinned to LE) ---

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
    put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, sizeof(bits));
    put_u32(out, bits);
}

struct ByteReader {
    const unsigned char* p;
    std::size_t n;
    std::size_t pos = 0;

    void need(std::size_t k, const char* what) {
        if (pos + k > n) throw ConfigError(std::string("truncated file while reading ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = std::uint32_t(p[pos]) | (std::uint32_t(p[pos + 1]) << 8) |
                          (std::uint32_t(p[pos + 2]) << 16) | (std::uint32_t(p[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        std::uint64_t lo = u32(what);
        std::uint64_t hi = u32(what);
        return lo | (hi << 32);
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        __builtin_memcpy(&v, &bits, sizeof(v));
        return v;
    }
};

}  // namespace mtlab
