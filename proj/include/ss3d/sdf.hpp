#pragma once

#include <algorithm>
#include <string>

#include "ss3d/camera.hpp"
#include "ss3d/core.hpp"

namespace ss3d {

enum class ShapeFamily { sphere, box, torus, cylinder, capsule, handlebox };

inline const char* family_name(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::sphere: return "sphere";
        case ShapeFamily::box: return "box";
        case ShapeFamily::torus: return "torus";
        case ShapeFamily::cylinder: return "cylinder";
        case ShapeFamily::capsule: return "capsule";
        case ShapeFamily::handlebox: return "handlebox";
    }
    return "?";
}

inline ShapeFamily family_from_name(const std::string& s) {
    for (ShapeFamily f : {ShapeFamily::sphere, ShapeFamily::box, ShapeFamily::torus,
                          ShapeFamily::cylinder, ShapeFamily::capsule, ShapeFamily::handlebox})
        if (s == family_name(f)) return f;
    fail(errc::invalid_argument, "unknown shape family: " + s);
}

// Analytic SDF primitive in the canonical frame (X left-to-right, Z upright).
// Parameter meaning by family:
//   sphere:    a = radius
//   box:       a,b,c = half extents
//   torus:     a = major radius (axis Z), b = tube radius
//   cylinder:  a = radius (axis Z), b = half height
//   capsule:   a = radius, b = half length of the core segment along X
//   handlebox: a,b,c = box half extents; d = handle major radius (axis Y,
//              centered on the top face), e = handle tube radius
struct PrimitiveShape {
    ShapeFamily family = ShapeFamily::sphere;
    Real a = 0.5, b = 0.25, c = 0.25, d = 0.3, e = 0.06;
    Vec3 albedo_primary{0.8, 0.2, 0.2};
    Vec3 albedo_secondary{0.2, 0.2, 0.8};
    Vec3 offset{};
    Real yaw_deg = 0;  // placement rotation about Z

    // Conservative radius of the bounding sphere around the origin.
    Real bounding_radius() const {
        Real r = 0;
        switch (family) {
            case ShapeFamily::sphere: r = a; break;
            case ShapeFamily::box: r = Vec3{a, b, c}.norm(); break;
            case ShapeFamily::torus: r = a + b; break;
            case ShapeFamily::cylinder: r = std::sqrt(a * a + b * b); break;
            case ShapeFamily::capsule: r = a + b; break;
            case ShapeFamily::handlebox:
                r = std::max(Vec3{a, b, c}.norm(), std::sqrt(d * d + b * b) + e + c);
                break;
        }
        return r + offset.norm();
    }

    bool degenerate() const { return bounding_radius() - offset.norm() < 1e-6; }
};

namespace detail {

inline Real sdf_box(const Vec3& p, Real hx, Real hy, Real hz) {
    Vec3 q{std::fabs(p.x) - hx, std::fabs(p.y) - hy, std::fabs(p.z) - hz};
    Real outside = q.cwise_max(0.0).norm();
    Real inside = std::min(q.max_component(), 0.0);
    return outside + inside;
}

inline Real sdf_torus_z(const Vec3& p, Real major, Real tube) {
    Real l = std::sqrt(p.x * p.x + p.y * p.y) - major;
    return std::sqrt(l * l + p.z * p.z) - tube;
}

inline Real sdf_torus_y(const Vec3& p, Real major, Real tube) {
    Real l = std::sqrt(p.x * p.x + p.z * p.z) - major;
    return std::sqrt(l * l + p.y * p.y) - tube;
}

}  // namespace detail

// Signed distance, negative inside. 1-Lipschitz for every family.
inline Real sdf(const PrimitiveShape& s, const Vec3& x) {
    Vec3 p = x - s.offset;
    if (s.yaw_deg != 0) {
        Real yaw = deg_to_rad(s.yaw_deg);
        Real c = std::cos(yaw), sn = std::sin(yaw);
        p = {c * p.x + sn * p.y, -sn * p.x + c * p.y, p.z};
    }
    switch (s.family) {
        case ShapeFamily::sphere:
            return p.norm() - s.a;
        case ShapeFamily::box:
            return detail::sdf_box(p, s.a, s.b, s.c);
        case ShapeFamily::torus:
            return detail::sdf_torus_z(p, s.a, s.b);
        case ShapeFamily::cylinder: {
            Real dxy = std::sqrt(p.x * p.x + p.y * p.y) - s.a;
            Real dz = std::fabs(p.z) - s.b;
            Real outside = Vec2{std::max(dxy, 0.0), std::max(dz, 0.0)}.norm();
            return std::min(std::max(dxy, dz), 0.0) + outside;
        }
        case ShapeFamily::capsule: {
            Real px = p.x - std::clamp(p.x, -s.b, s.b);
            return Vec3{px, p.y, p.z}.norm() - s.a;
        }
        case ShapeFamily::handlebox: {
            Real box = detail::sdf_box(p, s.a, s.b, s.c);
            Real handle = detail::sdf_torus_y(Vec3{p.x, p.y, p.z - s.c}, s.d, s.e);
            return std::min(box, handle);
        }
    }
    fail(errc::invalid_argument, "unknown shape family");
}

inline Vec3 sdf_normal(const PrimitiveShape& s, const Vec3& x, Real h = 1e-5) {
    Vec3 n{sdf(s, {x.x + h, x.y, x.z}) - sdf(s, {x.x - h, x.y, x.z}),
           sdf(s, {x.x, x.y + h, x.z}) - sdf(s, {x.x, x.y - h, x.z}),
           sdf(s, {x.x, x.y, x.z + h}) - sdf(s, {x.x, x.y, x.z - h})};
    return n.normalized();
}

// Two-region albedo; regions are chosen per family to give each shape an
// orientation cue. A shape with equal albedos is texture-free.
inline Vec3 albedo_at(const PrimitiveShape& s, const Vec3& x) {
    Vec3 p = x - s.offset;
    if (s.yaw_deg != 0) {
        Real yaw = deg_to_rad(s.yaw_deg);
        Real c = std::cos(yaw), sn = std::sin(yaw);
        p = {c * p.x + sn * p.y, -sn * p.x + c * p.y, p.z};
    }
    switch (s.family) {
        case ShapeFamily::handlebox: {
            Real box = detail::sdf_box(p, s.a, s.b, s.c);
            Real handle = detail::sdf_torus_y(Vec3{p.x, p.y, p.z - s.c}, s.d, s.e);
            return handle < box ? s.albedo_secondary : s.albedo_primary;
        }
        case ShapeFamily::cylinder:
            return p.z > 0 ? s.albedo_primary : s.albedo_secondary;
        default:
            return p.x > 0 ? s.albedo_primary : s.albedo_secondary;
    }
}

struct TraceResult {
    bool hit = false;
    Real t = 0;
    Vec3 point;
};

// Sphere tracing along a ray: at most max_steps steps, surface tolerance tol.
inline TraceResult sphere_trace(const PrimitiveShape& s, const Ray& ray, int max_steps = 128,
                                Real tol = 1e-4) {
    TraceResult res;
    if (s.degenerate()) return res;
    Real t = 0;
    Real t_max = ray.origin.norm() + s.bounding_radius() + 0.5;
    for (int i = 0; i < max_steps; ++i) {
        Vec3 p = ray.origin + ray.dir * t;
        Real d = sdf(s, p);
        if (d < tol) {
            res.hit = true;
            res.t = t;
            res.point = p;
            return res;
        }
        t += d;
        if (t > t_max) break;
    }
    return res;
}

}  // namespace ss3d
