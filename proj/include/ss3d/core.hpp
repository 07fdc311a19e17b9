#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ss3d {

using Real = double;
using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

constexpr Real kPi = 3.14159265358979323846;

inline Real deg_to_rad(Real d) { return d * (kPi / 180.0); }
inline Real rad_to_deg(Real r) { return r * (180.0 / kPi); }

// Wrap an angle in degrees into [0, 360).
inline Real wrap_deg(Real d) {
    d = std::fmod(d, 360.0);
    return d < 0 ? d + 360.0 : d;
}

// Smallest absolute difference between two azimuth angles, in degrees.
inline Real azimuth_distance_deg(Real a, Real b) {
    Real d = std::fabs(wrap_deg(a) - wrap_deg(b));
    return d > 180.0 ? 360.0 - d : d;
}

// ---------------------------------------------------------------------------
// Errors. Every user-facing failure carries a machine-parsable class string;
// the CLI prints "ERROR <class>: <message>" and maps the class to an exit code.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    std::string cls;
    Error(std::string error_class, const std::string& msg)
        : std::runtime_error(msg), cls(std::move(error_class)) {}
};

namespace errc {
inline constexpr const char* config_not_found = "CONFIG_NOT_FOUND";
inline constexpr const char* config_invalid = "CONFIG_INVALID";
inline constexpr const char* io_error = "IO_ERROR";
inline constexpr const char* format_error = "FORMAT_ERROR";
inline constexpr const char* arch_mismatch = "ARCH_MISMATCH";
inline constexpr const char* checksum_error = "CHECKSUM_ERROR";
inline constexpr const char* non_finite = "NON_FINITE";
inline constexpr const char* usage = "USAGE";
inline constexpr const char* invalid_argument = "INVALID_ARGUMENT";
}  // namespace errc

[[noreturn]] inline void fail(const char* cls, const std::string& msg) {
    throw Error(cls, msg);
}

// ---------------------------------------------------------------------------
// Small fixed-size vectors.
// ---------------------------------------------------------------------------

struct Vec3 {
    Real x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(Real s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(Real s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(Real s) { x *= s; y *= s; z *= s; return *this; }

    Real dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    Real norm2() const { return dot(*this); }
    Real norm() const { return std::sqrt(norm2()); }
    Vec3 normalized() const {
        Real n = norm();
        return n > 0 ? *this / n : Vec3{0, 0, 0};
    }
    Vec3 cwise_abs() const { return {std::fabs(x), std::fabs(y), std::fabs(z)}; }
    Vec3 cwise_max(Real v) const { return {std::max(x, v), std::max(y, v), std::max(z, v)}; }
    Real max_component() const { return std::max(x, std::max(y, z)); }
};

inline Vec3 operator*(Real s, const Vec3& v) { return v * s; }

struct Vec2 {
    Real x = 0, y = 0;
    Real norm() const { return std::sqrt(x * x + y * y); }
};

// ---------------------------------------------------------------------------
// Hashing and seeded random streams. All randomness in the project flows from
// one seed through named substreams so runs are reproducible per stage.
// ---------------------------------------------------------------------------

inline u64 fnv1a64(const void* data, std::size_t n, u64 h = 1469598103934665603ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline u64 fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline u64 splitmix64(u64& state) {
    u64 z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive the seed of a named substream from a base seed and a purpose string.
inline u64 derive_seed(u64 seed, std::string_view purpose) {
    u64 s = seed ^ fnv1a64(purpose);
    return splitmix64(s);
}

// mt19937_64 with pinned-bit uniform/normal draws (no libstdc++ distribution
// objects, so streams are identical across standard library versions).
class Rng {
public:
    explicit Rng(u64 seed) : eng_(seed) {}
    Rng(u64 seed, std::string_view purpose) : eng_(derive_seed(seed, purpose)) {}

    u64 next_u64() { return eng_(); }

    // Uniform in [0, 1).
    Real uniform() { return static_cast<Real>(eng_() >> 11) * 0x1.0p-53; }

    Real uniform(Real lo, Real hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    i64 uniform_int(i64 n) {
        // Rejection sampling keeps the draw exact for any n.
        u64 range = static_cast<u64>(n);
        u64 limit = UINT64_MAX - UINT64_MAX % range;
        u64 v;
        do { v = eng_(); } while (v >= limit);
        return static_cast<i64>(v % range);
    }

    Real normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        Real u1, u2;
        do { u1 = uniform(); } while (u1 <= 0);
        u2 = uniform();
        Real r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    Real spare_ = 0;
};

// ---------------------------------------------------------------------------
// Logging. Level comes from the SS3D_LOG environment variable
// (error | warn | info | debug), default warn.
// ---------------------------------------------------------------------------

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("SS3D_LOG");
        if (!env) return LogLevel::warn;
        std::string_view s(env);
        if (s == "error") return LogLevel::error;
        if (s == "warn") return LogLevel::warn;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

inline void logf(LogLevel lvl, const char* fmt, ...) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[ss3d %s] ", names[static_cast<int>(lvl)]);
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

#define SS3D_LOG_INFO(...) ::ss3d::logf(::ss3d::LogLevel::info, __VA_ARGS__)
#define SS3D_LOG_WARN(...) ::ss3d::logf(::ss3d::LogLevel::warn, __VA_ARGS__)
#define SS3D_LOG_DEBUG(...) ::ss3d::logf(::ss3d::LogLevel::debug, __VA_ARGS__)

inline bool all_finite(std::span<const Real> v) {
    for (Real x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Allocator that skips value-initialization; buffers that are fully written
// by the consumer do not pay for a zeroing pass.
template <typename T, typename Base = std::allocator<T>>
struct DefaultInitAllocator : Base {
    template <typename U>
    struct rebind {
        using other = DefaultInitAllocator<U, typename std::allocator_traits<Base>::template rebind_alloc<U>>;
    };
    using Base::Base;
    template <typename U>
    void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        std::allocator_traits<Base>::construct(static_cast<Base&>(*this), p,
                                               std::forward<Args>(args)...);
    }
};

using Buffer = std::vector<Real, DefaultInitAllocator<Real>>;

}  // namespace ss3d
