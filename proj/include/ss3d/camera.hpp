#pragma once

#include <cstdio>
#include <fstream>
#include <vector>

#include "ss3d/core.hpp"

namespace ss3d {

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length
    Real t_near = 0, t_far = 0;
};

// Orbit camera looking at the origin, Z-up canonical frame. Position is
// (r cos(el) cos(az), r cos(el) sin(az), r sin(el)) with angles in degrees.
struct OrbitCamera {
    Real azimuth_deg = 0;
    Real elevation_deg = 0;
    Real radius = 1.8;
    Real fov_deg = 40;  // vertical field of view
    int width = 64, height = 64;

    Vec3 position() const {
        Real az = deg_to_rad(azimuth_deg), el = deg_to_rad(elevation_deg);
        return {radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                radius * std::sin(el)};
    }

    struct Basis {
        Vec3 forward, right, up;
    };

    Basis basis() const {
        Vec3 pos = position();
        Vec3 fwd = (-pos).normalized();
        Vec3 world_up{0, 0, 1};
        Vec3 right = fwd.cross(world_up);
        if (right.norm() < 1e-9) right = fwd.cross(Vec3{1, 0, 0});  // pole view
        right = right.normalized();
        Vec3 up = right.cross(fwd);
        return {fwd, right, up};
    }

    // Normalized image-plane offsets for the center of pixel (px, py).
    Vec2 pixel_plane_coords(Real px, Real py) const {
        Real ty = std::tan(deg_to_rad(fov_deg) / 2);
        Real tx = ty * static_cast<Real>(width) / static_cast<Real>(height);
        Real sx = (2.0 * (px + 0.5) / width - 1.0) * tx;
        Real sy = (1.0 - 2.0 * (py + 0.5) / height) * ty;
        return {sx, sy};
    }
};

// Ray through the center of pixel (px, py). Near/far default to the render
// slab [radius - 1.2, radius + 1.2] around the unit ball.
inline Ray pixel_ray(const OrbitCamera& cam, Real px, Real py) {
    auto [fwd, right, up] = cam.basis();
    Vec2 s = cam.pixel_plane_coords(px, py);
    Ray r;
    r.origin = cam.position();
    r.dir = (fwd + right * s.x + up * s.y).normalized();
    r.t_near = cam.radius - 1.2;
    r.t_far = cam.radius + 1.2;
    return r;
}

// ---------------------------------------------------------------------------
// Binary camera table: magic "SS3DCAM1", then little-endian records of
// (instance id u32, view id u16, azimuth f32, elevation f32, radius f32,
// fov f32) until end of file.
// ---------------------------------------------------------------------------

struct CameraRecord {
    u32 instance_id = 0;
    u16 view_id = 0;
    OrbitCamera camera;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    u32 bits;
    std::memcpy(&bits, &f, 4);
    put_le(out, bits);
}

template <typename T>
T get_le(const char* p) {
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

inline float get_f32(const char* p) {
    u32 bits = get_le<u32>(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace detail

inline constexpr char kCameraMagic[8] = {'S', 'S', '3', 'D', 'C', 'A', 'M', '1'};
inline constexpr size_t kCameraRecordSize = 4 + 2 + 4 * 4;

inline void write_camera_table(const std::string& path, const std::vector<CameraRecord>& records) {
    std::string buf(kCameraMagic, 8);
    for (const auto& r : records) {
        detail::put_le(buf, r.instance_id);
        detail::put_le(buf, r.view_id);
        detail::put_f32(buf, static_cast<float>(r.camera.azimuth_deg));
        detail::put_f32(buf, static_cast<float>(r.camera.elevation_deg));
        detail::put_f32(buf, static_cast<float>(r.camera.radius));
        detail::put_f32(buf, static_cast<float>(r.camera.fov_deg));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(errc::io_error, "cannot write camera table: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) fail(errc::io_error, "short write: " + path);
}

inline std::vector<CameraRecord> read_camera_table(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(errc::io_error, "cannot open camera table: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kCameraMagic, 8) != 0)
        fail(errc::format_error, "bad camera table magic: " + path);
    if ((buf.size() - 8) % kCameraRecordSize != 0)
        fail(errc::format_error, "truncated camera table: " + path);
    std::vector<CameraRecord> out;
    for (size_t off = 8; off + kCameraRecordSize <= buf.size(); off += kCameraRecordSize) {
        const char* p = buf.data() + off;
        CameraRecord r;
        r.instance_id = detail::get_le<u32>(p);
        r.view_id = detail::get_le<u16>(p + 4);
        r.camera.azimuth_deg = detail::get_f32(p + 6);
        r.camera.elevation_deg = detail::get_f32(p + 10);
        r.camera.radius = detail::get_f32(p + 14);
        r.camera.fov_deg = detail::get_f32(p + 18);
        out.push_back(r);
    }
    return out;
}

}  // namespace ss3d
